#include "partaff/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "partaff/error.hpp"

namespace partaff::io {

using nlohmann::json;

namespace {

constexpr std::uint32_t kVersion = 1;

class Writer {
public:
    void raw(const char* s, std::size_t n) { out.insert(out.end(), s, s + n); }
    void u16(std::uint16_t v) {
        out.push_back(static_cast<std::uint8_t>(v));
        out.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

    Bytes out;
};

class Reader {
public:
    Reader(std::span<const std::uint8_t> bytes, const char* what) : bytes_(bytes), what_(what) {}

    void need(std::uint64_t n) const {
        if (n > bytes_.size() - pos_) {
            throw FormatError(std::string(what_) + ": size mismatch (payload truncated)");
        }
    }
    std::string raw(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::uint16_t u16() {
        need(2);
        const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(bytes_[pos_ + k]) << (8 * k);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::uint64_t remaining() const { return bytes_.size() - pos_; }
    void finish() const {
        if (pos_ != bytes_.size()) throw FormatError(std::string(what_) + ": size mismatch (trailing bytes)");
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    const char* what_;
};

void expect_magic(Reader& r, const char* magic, const char* what) {
    if (r.raw(4) != magic) throw FormatError(std::string(what) + ": bad magic");
    const auto version = r.u32();
    if (version != kVersion) throw FormatError(std::string(what) + ": unsupported version " + std::to_string(version));
}

std::uint64_t checked_payload(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t cap, const Reader& r,
                              const char* what) {
    // Each factor is < 2^32, so a*b fits; guard the final product.
    const std::uint64_t ab = a * b;
    if (c != 0 && ab > cap / c) throw FormatError(std::string(what) + ": declared size exceeds cap");
    const std::uint64_t count = ab * c;
    if (count * 4 > cap) throw FormatError(std::string(what) + ": declared size exceeds cap");
    r.need(count * 4);
    return count;
}

json read_json(const fs::path& path) {
    const auto bytes = read_file(path);
    try {
        return json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace

float to_f32(double v) { return static_cast<float>(v); }

Bytes encode_attention(std::span<const AttentionRecord> records) {
    Writer w;
    w.raw("PAM1", 4);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        r.validate();
        for (auto v : {r.t, r.layer, r.camera_id, r.height, r.width, r.tokens}) w.u32(v);
        for (float v : r.values) w.f32(v);
    }
    return std::move(w.out);
}

std::vector<AttentionRecord> decode_attention(std::span<const std::uint8_t> bytes, std::uint64_t size_cap) {
    if (bytes.size() > size_cap) throw FormatError("PAM1: file exceeds size cap");
    Reader r(bytes, "PAM1");
    expect_magic(r, "PAM1", "PAM1");
    const auto count = r.u32();
    // Every record carries at least a 24-byte header.
    if (static_cast<std::uint64_t>(count) * 24 > r.remaining()) throw FormatError("PAM1: size mismatch (record count)");
    std::vector<AttentionRecord> out;
    out.reserve(count);
    for (std::uint32_t k = 0; k < count; ++k) {
        AttentionRecord rec;
        rec.t = r.u32();
        rec.layer = r.u32();
        rec.camera_id = r.u32();
        rec.height = r.u32();
        rec.width = r.u32();
        rec.tokens = r.u32();
        const auto n = checked_payload(rec.height, rec.width, rec.tokens, size_cap, r, "PAM1");
        rec.values.resize(n);
        for (auto& v : rec.values) {
            v = r.f32();
            if (!std::isfinite(v)) throw FormatError("PAM1: NaN or infinite payload");
            if (v < 0.0f) throw FormatError("PAM1: negative attention value");
        }
        out.push_back(std::move(rec));
    }
    r.finish();
    return out;
}

Bytes encode_affinity_map(const PartAffinityMap& map) {
    if (map.values.size() != map.height * map.width) throw ValidationError("PAF1: map payload size mismatch");
    if (map.part_label.size() > 0xFFFF) throw ValidationError("PAF1: label too long");
    Writer w;
    w.raw("PAF1", 4);
    w.u32(kVersion);
    w.u16(static_cast<std::uint16_t>(map.part_label.size()));
    w.raw(map.part_label.data(), map.part_label.size());
    w.u32(map.camera_id);
    w.u32(static_cast<std::uint32_t>(map.height));
    w.u32(static_cast<std::uint32_t>(map.width));
    for (double v : map.values) {
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("PAF1: affinity values must lie in [0, 1]");
        w.f32(to_f32(v));
    }
    return std::move(w.out);
}

PartAffinityMap decode_affinity_map(std::span<const std::uint8_t> bytes, std::uint64_t size_cap) {
    if (bytes.size() > size_cap) throw FormatError("PAF1: file exceeds size cap");
    Reader r(bytes, "PAF1");
    expect_magic(r, "PAF1", "PAF1");
    PartAffinityMap m;
    m.part_label = r.raw(r.u16());
    m.camera_id = r.u32();
    m.height = r.u32();
    m.width = r.u32();
    const auto n = checked_payload(m.height, m.width, 1, size_cap, r, "PAF1");
    m.values.resize(n);
    for (auto& v : m.values) {
        const float f = r.f32();
        if (!std::isfinite(f)) throw FormatError("PAF1: NaN or infinite payload");
        if (f < 0.0f || f > 1.0f) throw FormatError("PAF1: value outside [0, 1]");
        v = f;
    }
    r.finish();
    return m;
}

Bytes read_file(const fs::path& path, std::uint64_t size_cap) {
    std::error_code ec;
    const auto size = fs::file_size(path, ec);
    if (ec) throw ValidationError("cannot read " + path.string() + ": " + ec.message());
    if (size > size_cap) throw FormatError(path.string() + ": file exceeds size cap");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    Bytes bytes(size);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!in) throw ValidationError("short read on " + path.string());
    return bytes;
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("write failed for " + path.string());
}

std::vector<AttentionRecord> read_attention(const fs::path& path) { return decode_attention(read_file(path)); }

void write_attention(const fs::path& path, std::span<const AttentionRecord> records) {
    write_file(path, encode_attention(records));
}

PartAffinityMap read_affinity_map(const fs::path& path) { return decode_affinity_map(read_file(path)); }

void write_affinity_map(const fs::path& path, const PartAffinityMap& map) {
    write_file(path, encode_affinity_map(map));
}

AttentionRecord import_npy_attention(const fs::path& path, std::uint32_t t, std::uint32_t layer,
                                     std::uint32_t camera_id) {
    const auto bytes = read_file(path);
    if (bytes.size() < 10 || std::memcmp(bytes.data(), "\x93NUMPY", 6) != 0) throw FormatError("npy: bad magic");
    const int major = bytes[6];
    std::size_t header_len = 0, offset = 0;
    if (major == 1) {
        header_len = bytes[8] | (bytes[9] << 8);
        offset = 10;
    } else if (major == 2 || major == 3) {
        if (bytes.size() < 12) throw FormatError("npy: truncated header");
        header_len = bytes[8] | (bytes[9] << 8) | (bytes[10] << 16) | (static_cast<std::size_t>(bytes[11]) << 24);
        offset = 12;
    } else {
        throw FormatError("npy: unsupported version");
    }
    if (offset + header_len > bytes.size()) throw FormatError("npy: truncated header");
    const std::string header(reinterpret_cast<const char*>(bytes.data() + offset), header_len);
    const bool f32 = header.find("'<f4'") != std::string::npos;
    const bool f64 = header.find("'<f8'") != std::string::npos;
    if (!f32 && !f64) throw FormatError("npy: only little-endian float32/float64 arrays are supported");
    if (header.find("'fortran_order': False") == std::string::npos) throw FormatError("npy: Fortran order unsupported");
    const auto lp = header.find('(', header.find("'shape'"));
    const auto rp = header.find(')', lp);
    if (lp == std::string::npos || rp == std::string::npos) throw FormatError("npy: missing shape");
    std::vector<std::uint64_t> dims;
    std::stringstream ss(header.substr(lp + 1, rp - lp - 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.find_first_not_of(" ") == std::string::npos) continue;
        dims.push_back(std::stoull(item));
    }
    if (dims.size() != 3) throw FormatError("npy: expected a (H, W, n) array");
    for (auto d : dims) {
        if (d == 0 || d > 0xFFFFFFFFull) throw FormatError("npy: bad dimension");
    }
    const std::size_t elem = f32 ? 4 : 8;
    const std::uint64_t count = dims[0] * dims[1] * dims[2];
    if (count * elem != bytes.size() - offset - header_len) throw FormatError("npy: size mismatch");
    AttentionRecord rec{t, layer, camera_id, static_cast<std::uint32_t>(dims[0]), static_cast<std::uint32_t>(dims[1]),
                        static_cast<std::uint32_t>(dims[2]), std::vector<float>(count)};
    const std::uint8_t* p = bytes.data() + offset + header_len;
    for (std::uint64_t i = 0; i < count; ++i) {
        if (f32) {
            std::uint32_t u = 0;
            for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(p[i * 4 + k]) << (8 * k);
            rec.values[i] = std::bit_cast<float>(u);
        } else {
            std::uint64_t u = 0;
            for (int k = 0; k < 8; ++k) u |= static_cast<std::uint64_t>(p[i * 8 + k]) << (8 * k);
            rec.values[i] = to_f32(std::bit_cast<double>(u));
        }
    }
    rec.validate();
    return rec;
}

std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Bytes encode_image(const Image& image) {
    if (image.channels != 1 && image.channels != 3) throw ValidationError("images have 1 or 3 channels");
    if (image.pixels.size() != image.width * image.height * image.channels) {
        throw ValidationError("image payload size mismatch");
    }
    const std::string header = std::string(image.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(image.width) +
                               " " + std::to_string(image.height) + "\n255\n";
    Bytes out(header.begin(), header.end());
    out.insert(out.end(), image.pixels.begin(), image.pixels.end());
    return out;
}

Image decode_image(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        std::string s;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) s.push_back(static_cast<char>(bytes[pos++]));
        if (s.empty()) throw FormatError("image: truncated header");
        return s;
    };
    const auto magic = token();
    Image img;
    if (magic == "P5") {
        img.channels = 1;
    } else if (magic == "P6") {
        img.channels = 3;
    } else {
        throw FormatError("image: bad magic");
    }
    try {
        img.width = std::stoul(token());
        img.height = std::stoul(token());
        if (std::stoul(token()) != 255) throw FormatError("image: only maxval 255 is supported");
    } catch (const std::logic_error&) {
        throw FormatError("image: malformed header");
    }
    ++pos;  // single whitespace after maxval
    const std::size_t n = img.width * img.height * img.channels;
    if (pos > bytes.size() || bytes.size() - pos != n) throw FormatError("image: size mismatch");
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return img;
}

Image grayscale_image(std::span<const double> values, std::size_t height, std::size_t width) {
    if (values.size() != height * width) throw ShapeError("grayscale image size mismatch");
    Image img{width, height, 1, {}};
    for (double v : values) img.pixels.push_back(quantize(v));
    return img;
}

Image rgb_image(const Tensor& rgb, std::size_t height, std::size_t width) {
    if (rgb.size() != height * width * 3) throw ShapeError("rgb image size mismatch");
    Image img{width, height, 3, {}};
    for (double v : rgb.data()) img.pixels.push_back(quantize(v));
    return img;
}

Image heatmap_image(std::span<const double> values, std::size_t height, std::size_t width) {
    static constexpr double table[6][3] = {{0, 0, 0}, {0.33, 0, 0.5}, {0.8, 0.1, 0.25},
                                           {1, 0.5, 0},     {1, 0.9, 0.1}, {1, 1, 1}};
    if (values.size() != height * width) throw ShapeError("heatmap size mismatch");
    Image img{width, height, 3, {}};
    for (double v : values) {
        const double x = std::clamp(v, 0.0, 1.0) * 5.0;
        const int k = std::min(4, static_cast<int>(x));
        const double f = x - k;
        for (int c = 0; c < 3; ++c) img.pixels.push_back(quantize(table[k][c] * (1.0 - f) + table[k + 1][c] * f));
    }
    return img;
}

void write_image(const fs::path& path, const Image& image) { write_file(path, encode_image(image)); }

std::string encode_manifest(std::span<const CameraPose> poses) {
    json arr = json::array();
    for (const auto& p : poses) {
        arr.push_back({{"id", p.id},
                       {"radius", p.radius},
                       {"elevation_deg", p.elevation},
                       {"azimuth_deg", p.azimuth},
                       {"fov_deg", p.fov}});
    }
    return arr.dump(2);
}

std::vector<CameraPose> decode_manifest(const std::string& text) {
    std::vector<CameraPose> poses;
    try {
        const auto arr = json::parse(text);
        if (!arr.is_array()) throw FormatError("camera manifest must be a JSON array");
        for (const auto& e : arr) {
            CameraPose p;
            p.id = e.at("id").get<int>();
            p.radius = e.at("radius").get<double>();
            p.elevation = e.at("elevation_deg").get<double>();
            p.azimuth = e.at("azimuth_deg").get<double>();
            p.fov = e.at("fov_deg").get<double>();
            p.validate();
            poses.push_back(p);
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("camera manifest: ") + e.what());
    }
    return poses;
}

std::vector<CameraPose> read_manifest(const fs::path& path) {
    const auto bytes = read_file(path);
    return decode_manifest(std::string(bytes.begin(), bytes.end()));
}

void write_manifest(const fs::path& path, std::span<const CameraPose> poses) {
    const auto s = encode_manifest(poses) + "\n";
    write_file(path, Bytes(s.begin(), s.end()));
}

std::string encode_prompt(const PromptSpec& prompt) {
    json parts = json::array();
    for (const auto& p : prompt.parts) parts.push_back({{"label", p.label}, {"indices", p.indices}});
    return json{{"tokens", prompt.tokens}, {"parts", parts}}.dump(2);
}

PromptSpec decode_prompt(const std::string& text) {
    PromptSpec spec;
    try {
        const auto j = json::parse(text);
        spec.tokens = j.at("tokens").get<std::vector<std::string>>();
        for (const auto& p : j.at("parts")) {
            spec.parts.push_back({p.at("label").get<std::string>(), p.at("indices").get<std::vector<std::size_t>>()});
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("prompt spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

PromptSpec read_prompt(const fs::path& path) {
    const auto bytes = read_file(path);
    return decode_prompt(std::string(bytes.begin(), bytes.end()));
}

namespace {

fs::path blob_path(const fs::path& path) { return fs::path(path.string() + ".bin"); }

void write_mlp(const fs::path& path, const MlpField& mlp, json header) {
    mlp.validate();
    header["format"] = "partaff-field";
    header["version"] = 1;
    header["architecture"] = "mlp-1hidden-relu";
    header["frequencies"] = mlp.frequencies;
    header["hidden"] = mlp.hidden;
    header["outputs"] = mlp.outputs;
    header["weights_file"] = blob_path(path).filename().string();
    json shapes = json::array();
    for (const auto& w : mlp.weights) shapes.push_back(w.shape());
    header["weight_shapes"] = shapes;
    Writer blob;
    for (const auto& w : mlp.weights) {
        for (double v : w.data()) blob.f32(to_f32(v));
    }
    write_file(blob_path(path), blob.out);
    const auto text = header.dump(2) + "\n";
    write_file(path, Bytes(text.begin(), text.end()));
}

MlpField read_mlp(const fs::path& path, json& header) {
    header = read_json(path);
    MlpField mlp;
    std::string weights_file;
    try {
        if (header.at("format") != "partaff-field" || header.at("version") != 1) {
            throw FormatError(path.string() + ": not a field checkpoint");
        }
        mlp.frequencies = header.at("frequencies").get<std::size_t>();
        mlp.hidden = header.at("hidden").get<std::size_t>();
        mlp.outputs = header.at("outputs").get<std::size_t>();
        weights_file = header.at("weights_file").get<std::string>();
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    const Shape shapes[4] = {{mlp.input_dim(), mlp.hidden}, {mlp.hidden}, {mlp.hidden, mlp.outputs}, {mlp.outputs}};
    std::uint64_t total = 0;
    for (const auto& s : shapes) total += shape_size(s);
    const auto blob = read_file(path.parent_path() / weights_file);
    if (blob.size() != total * 4) throw FormatError(path.string() + ": weight blob size mismatch");
    Reader r(blob, "checkpoint");
    for (const auto& s : shapes) {
        std::vector<double> v(shape_size(s));
        for (auto& x : v) {
            const float f = r.f32();
            if (!std::isfinite(f)) throw FormatError("checkpoint: NaN or infinite weight");
            x = f;
        }
        mlp.weights.emplace_back(s, std::move(v));
    }
    r.finish();
    mlp.validate();
    return mlp;
}

}  // namespace

void write_affinity_checkpoint(const fs::path& path, const AffinityField& field) {
    field.validate();
    write_mlp(path, field.mlp, json{{"kind", "affinity"}, {"part_labels", field.part_labels}});
}

AffinityField read_affinity_checkpoint(const fs::path& path) {
    json header;
    AffinityField f;
    f.mlp = read_mlp(path, header);
    if (header.value("kind", "") != "affinity") throw FormatError(path.string() + ": not an affinity checkpoint");
    try {
        f.part_labels = header.at("part_labels").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    f.validate();
    return f;
}

void write_asset_checkpoint(const fs::path& path, const AssetField& asset) {
    asset.validate();
    write_mlp(path, asset.mlp, json{{"kind", "asset"}});
}

AssetField read_asset_checkpoint(const fs::path& path) {
    json header;
    AssetField a{read_mlp(path, header)};
    if (header.value("kind", "") != "asset") throw FormatError(path.string() + ": not an asset checkpoint");
    a.validate();
    return a;
}

std::string sanitize_label(const std::string& label) {
    std::string s = label;
    for (auto& c : s) {
        if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
    }
    return s;
}

}  // namespace partaff::io
