#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "partaff/error.hpp"
#include "partaff/io.hpp"
#include "partaff/rng.hpp"

using namespace partaff;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("partaff_io_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

AttentionRecord random_record(Rng& rng) {
    AttentionRecord r;
    r.t = static_cast<std::uint32_t>(rng.uniform_int(0, 1000));
    r.layer = static_cast<std::uint32_t>(rng.uniform_int(0, 15));
    r.camera_id = static_cast<std::uint32_t>(rng.uniform_int(0, 1 << 20));
    r.height = static_cast<std::uint32_t>(rng.uniform_int(1, 5));
    r.width = static_cast<std::uint32_t>(rng.uniform_int(1, 5));
    r.tokens = static_cast<std::uint32_t>(rng.uniform_int(1, 6));
    r.values.resize(static_cast<std::size_t>(r.height) * r.width * r.tokens);
    for (auto& v : r.values) v = static_cast<float>(rng.uniform(0.0, 3.0));
    return r;
}

bool same_record(const AttentionRecord& a, const AttentionRecord& b) {
    return a.t == b.t && a.layer == b.layer && a.camera_id == b.camera_id && a.height == b.height &&
           a.width == b.width && a.tokens == b.tokens && a.values == b.values;
}

// Decoding arbitrary bytes must either succeed or raise FormatError.
template <class F>
void expect_clean(F&& decode, const io::Bytes& bytes) {
    try {
        decode(bytes);
    } catch (const FormatError&) {
    }
}

}  // namespace

// Golden file hex (68 bytes):
// 50414d31 01000000 01000000 f4010000 0b000000 03000000 02000000 02000000
// 02000000 0000003f 0000803e 0000803f 00000000 0000003e 00000040 0000403f 0000803d
TEST(Pam1, GoldenFileDecodesAndReencodes) {
    const auto bytes = io::read_file(fs::path(PARTAFF_TEST_DATA) / "golden_2x2x2.pam");
    ASSERT_EQ(bytes.size(), 68u);
    const auto recs = io::decode_attention(bytes);
    ASSERT_EQ(recs.size(), 1u);
    const auto& r = recs[0];
    EXPECT_EQ(r.t, 500u);
    EXPECT_EQ(r.layer, 11u);
    EXPECT_EQ(r.camera_id, 3u);
    EXPECT_EQ(r.height, 2u);
    EXPECT_EQ(r.width, 2u);
    EXPECT_EQ(r.tokens, 2u);
    EXPECT_EQ(r.values, (std::vector<float>{0.5f, 0.25f, 1.0f, 0.0f, 0.125f, 2.0f, 0.75f, 0.0625f}));
    EXPECT_EQ(io::encode_attention(recs), bytes);
}

TEST(Pam1, FuzzRoundTrips) {
    Rng rng(2024);
    for (int k = 0; k < 10000; ++k) {
        std::vector<AttentionRecord> recs(static_cast<std::size_t>(rng.uniform_int(0, 3)));
        for (auto& r : recs) r = random_record(rng);
        const auto bytes = io::encode_attention(recs);
        const auto back = io::decode_attention(bytes);
        ASSERT_EQ(back.size(), recs.size());
        for (std::size_t i = 0; i < recs.size(); ++i) ASSERT_TRUE(same_record(recs[i], back[i]));
        ASSERT_EQ(io::encode_attention(back), bytes);
    }
}

TEST(Pam1, TruncationAndTrailingBytes) {
    Rng rng(3);
    const std::vector<AttentionRecord> recs{random_record(rng), random_record(rng)};
    const auto bytes = io::encode_attention(recs);
    for (std::size_t n = 0; n < bytes.size(); ++n) {
        const io::Bytes cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
        EXPECT_THROW(io::decode_attention(cut), FormatError) << n;
    }
    auto longer = bytes;
    longer.push_back(0);
    EXPECT_THROW(io::decode_attention(longer), FormatError);
}

TEST(Pam1, RejectsCorruptHeadersAndPayloads) {
    const auto golden = io::read_file(fs::path(PARTAFF_TEST_DATA) / "golden_2x2x2.pam");
    auto bad = golden;
    bad[0] = 'X';
    EXPECT_THROW(io::decode_attention(bad), FormatError);
    bad = golden;
    bad[4] = 2;  // version
    EXPECT_THROW(io::decode_attention(bad), FormatError);
    bad = golden;
    bad[8] = 0xFF;  // record count
    EXPECT_THROW(io::decode_attention(bad), FormatError);
    bad = golden;
    for (int k = 0; k < 4; ++k) bad[24 + k] = 0xFF;  // H = 2^32 - 1
    EXPECT_THROW(io::decode_attention(bad), FormatError);
    bad = golden;
    bad[36 + 3] = 0x7F, bad[36 + 2] = 0xC0;  // first value NaN
    EXPECT_THROW(io::decode_attention(bad), FormatError);
    bad = golden;
    bad[36 + 3] = 0xBF;  // first value -0.5
    EXPECT_THROW(io::decode_attention(bad), FormatError);
    EXPECT_THROW(io::decode_attention(golden, 32), FormatError);
}

TEST(Pam1, RandomCorruptionNeverCrashes) {
    Rng rng(17);
    for (int k = 0; k < 2000; ++k) {
        const std::vector<AttentionRecord> recs{random_record(rng)};
        auto bytes = io::encode_attention(recs);
        const int flips = static_cast<int>(rng.uniform_int(1, 4));
        for (int f = 0; f < flips; ++f) {
            bytes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(bytes.size()) - 1))] =
                static_cast<std::uint8_t>(rng.uniform_int(0, 255));
        }
        expect_clean([](const io::Bytes& b) { io::decode_attention(b); }, bytes);
    }
}

TEST(Paf1, RoundTripRoundsToFloat32) {
    PartAffinityMap m{"red head", 7, 2, 3, {0.0, 0.1, 1.0 / 3.0, 0.5, 0.999999999, 1.0}};
    const auto back = io::decode_affinity_map(io::encode_affinity_map(m));
    EXPECT_EQ(back.part_label, "red head");
    EXPECT_EQ(back.camera_id, 7u);
    EXPECT_EQ(back.height, 2u);
    EXPECT_EQ(back.width, 3u);
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        EXPECT_EQ(back.values[i], static_cast<double>(static_cast<float>(m.values[i])));
    }
    m.values[0] = 1.5;
    EXPECT_THROW(io::encode_affinity_map(m), ValidationError);
    m.values.pop_back();
    EXPECT_THROW(io::encode_affinity_map(m), ValidationError);
}

TEST(Paf1, TruncationAndCorruption) {
    const PartAffinityMap m{"blue body", 1, 2, 2, {0.25, 0.5, 0.75, 1.0}};
    const auto bytes = io::encode_affinity_map(m);
    for (std::size_t n = 0; n < bytes.size(); ++n) {
        EXPECT_THROW(io::decode_affinity_map(io::Bytes(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n))),
                     FormatError);
    }
    auto bad = bytes;
    bad[bad.size() - 1] = 0x40;  // last value becomes > 1
    EXPECT_THROW(io::decode_affinity_map(bad), FormatError);
    Rng rng(5);
    for (int k = 0; k < 2000; ++k) {
        auto b = bytes;
        b[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(b.size()) - 1))] =
            static_cast<std::uint8_t>(rng.uniform_int(0, 255));
        expect_clean([](const io::Bytes& x) { io::decode_affinity_map(x); }, b);
    }
}

TEST(Float32, RoundsToNearestEven) {
    EXPECT_EQ(io::to_f32(1.0 + std::ldexp(1.0, -24)), 1.0f);
    EXPECT_EQ(io::to_f32(1.0 + 3.0 * std::ldexp(1.0, -24)), 1.0f + std::ldexp(1.0f, -22));
    EXPECT_EQ(io::to_f32(0.1), 0.1f);
}

TEST(Images, EncodeDecodeAndQuantize) {
    EXPECT_EQ(io::quantize(-1.0), 0);
    EXPECT_EQ(io::quantize(0.5), 128);
    EXPECT_EQ(io::quantize(2.0), 255);
    const auto g = io::grayscale_image(std::vector<double>{0.0, 0.25, 0.5, 1.0}, 2, 2);
    const auto bytes = io::encode_image(g);
    const std::string header = "P5\n2 2\n255\n";
    ASSERT_EQ(bytes.size(), header.size() + 4);
    EXPECT_TRUE(std::equal(header.begin(), header.end(), bytes.begin()));
    const auto back = io::decode_image(bytes);
    EXPECT_EQ(back.pixels, (std::vector<std::uint8_t>{0, 64, 128, 255}));
    EXPECT_EQ(back.channels, 1u);
    const auto rgb = io::rgb_image(Tensor({1, 3}, {1.0, 0.0, 0.5}), 1, 1);
    EXPECT_EQ(io::decode_image(io::encode_image(rgb)).pixels, (std::vector<std::uint8_t>{255, 0, 128}));
    auto cut = bytes;
    cut.pop_back();
    EXPECT_THROW(io::decode_image(cut), FormatError);
    EXPECT_THROW(io::decode_image(io::Bytes{'P', '7'}), FormatError);
}

TEST(Images, HeatmapTableEndpoints) {
    const auto h = io::heatmap_image(std::vector<double>{0.0, 0.6, 1.0}, 1, 3);
    EXPECT_EQ(h.pixels, (std::vector<std::uint8_t>{0, 0, 0, 255, 128, 0, 255, 255, 255}));
}

TEST(Manifest, RoundTripAndValidation) {
    std::vector<CameraPose> poses(2);
    poses[0].id = 4;
    poses[0].azimuth = 33.5;
    poses[0].elevation = -10.0;
    poses[1].id = 9;
    poses[1].radius = 2.5;
    poses[1].fov = 40.0;
    const auto back = io::decode_manifest(io::encode_manifest(poses));
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].id, 4);
    EXPECT_EQ(back[0].azimuth, 33.5);
    EXPECT_EQ(back[0].elevation, -10.0);
    EXPECT_EQ(back[1].radius, 2.5);
    EXPECT_EQ(back[1].fov, 40.0);
    EXPECT_THROW(io::decode_manifest("{}"), FormatError);
    EXPECT_THROW(io::decode_manifest("[{\"id\":1}]"), FormatError);
    EXPECT_THROW(io::decode_manifest("[{\"id\":1,\"radius\":-1,\"elevation_deg\":0,\"azimuth_deg\":0,\"fov_deg\":49}]"),
                 ValidationError);
}

TEST(Prompt, RoundTripAndValidation) {
    PromptSpec p{{"a", "red", "head"}, {{"red head", {1, 2}}}};
    const auto back = io::decode_prompt(io::encode_prompt(p));
    EXPECT_EQ(back.tokens, p.tokens);
    ASSERT_EQ(back.parts.size(), 1u);
    EXPECT_EQ(back.parts[0].indices, (std::vector<std::size_t>{1, 2}));
    EXPECT_THROW(io::decode_prompt("not json"), FormatError);
    EXPECT_THROW(io::decode_prompt(R"({"tokens":["a"],"parts":[{"label":"x","indices":[3]}]})"), ValidationError);
}

TEST(Checkpoints, RoundTripAtFloat32) {
    const auto dir = scratch_dir("ckpt");
    const auto field = AffinityField::init({"red head", "blue body"}, 8, 2, 3);
    io::write_affinity_checkpoint(dir / "affinity.json", field);
    EXPECT_TRUE(fs::exists(dir / "affinity.json.bin"));
    const auto back = io::read_affinity_checkpoint(dir / "affinity.json");
    EXPECT_EQ(back.part_labels, field.part_labels);
    for (std::size_t k = 0; k < 4; ++k) {
        for (std::size_t i = 0; i < field.mlp.weights[k].size(); ++i) {
            EXPECT_EQ(back.mlp.weights[k][i], static_cast<double>(static_cast<float>(field.mlp.weights[k][i])));
        }
    }
    EXPECT_THROW(io::read_asset_checkpoint(dir / "affinity.json"), FormatError);

    const auto asset = AssetField::init(8, 2, 1);
    io::write_asset_checkpoint(dir / "asset.json", asset);
    EXPECT_EQ(io::read_asset_checkpoint(dir / "asset.json").mlp.hidden, 8u);

    auto blob = io::read_file(dir / "asset.json.bin");
    blob.pop_back();
    io::write_file(dir / "asset.json.bin", blob);
    EXPECT_THROW(io::read_asset_checkpoint(dir / "asset.json"), FormatError);
    EXPECT_THROW(io::read_asset_checkpoint(dir / "missing.json"), ValidationError);
}

TEST(Npy, ImportsFloat32AndFloat64) {
    const auto dir = scratch_dir("npy");
    auto make = [&](const std::string& descr, std::size_t elem, const std::string& shape) {
        std::string header = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': " + shape + ", }";
        while ((10 + header.size() + 1) % 64 != 0) header.push_back(' ');
        header.push_back('\n');
        io::Bytes b{0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0, static_cast<std::uint8_t>(header.size()), 0};
        b.insert(b.end(), header.begin(), header.end());
        for (int i = 0; i < 8; ++i) {
            if (elem == 4) {
                const float f = 0.5f * static_cast<float>(i);
                const auto* p = reinterpret_cast<const std::uint8_t*>(&f);
                b.insert(b.end(), p, p + 4);
            } else {
                const double d = 0.5 * i;
                const auto* p = reinterpret_cast<const std::uint8_t*>(&d);
                b.insert(b.end(), p, p + 8);
            }
        }
        return b;
    };
    io::write_file(dir / "a.npy", make("<f4", 4, "(2, 2, 2)"));
    io::write_file(dir / "b.npy", make("<f8", 8, "(1, 4, 2)"));
    io::write_file(dir / "c.npy", make("<f8", 8, "(2, 2, 3)"));
    const auto a = io::import_npy_attention(dir / "a.npy", 500, 11, 0);
    EXPECT_EQ(a.height, 2u);
    EXPECT_EQ(a.values[7], 3.5f);
    const auto b = io::import_npy_attention(dir / "b.npy", 500, 11, 0);
    EXPECT_EQ(b.width, 4u);
    EXPECT_EQ(b.values[3], 1.5f);
    EXPECT_THROW(io::import_npy_attention(dir / "c.npy", 500, 11, 0), FormatError);
}

TEST(Labels, Sanitize) { EXPECT_EQ(io::sanitize_label("red head/2"), "red_head_2"); }
