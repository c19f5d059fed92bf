#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "partaff/affinity_field.hpp"
#include "partaff/camera.hpp"
#include "partaff/extraction.hpp"
#include "partaff/sds.hpp"

namespace partaff::io {

namespace fs = std::filesystem;
using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint64_t kDefaultSizeCap = 1ull << 30;

/// Narrowing used by every writer: IEEE round-to-nearest-even.
float to_f32(double v);

// PAM1 attention container:
//   "PAM1" u32 version=1 u32 record_count
//   per record: u32 t, layer, camera_id, H, W, n, then H*W*n f32
// All integers and floats little-endian; trailing bytes are rejected.
Bytes encode_attention(std::span<const AttentionRecord> records);
std::vector<AttentionRecord> decode_attention(std::span<const std::uint8_t> bytes,
                                              std::uint64_t size_cap = kDefaultSizeCap);

// PAF1 affinity map:
//   "PAF1" u32 version=1 u16 label_len, label bytes (UTF-8), u32 camera_id,
//   u32 H, u32 W, H*W f32 in [0, 1]
Bytes encode_affinity_map(const PartAffinityMap& map);
PartAffinityMap decode_affinity_map(std::span<const std::uint8_t> bytes, std::uint64_t size_cap = kDefaultSizeCap);

Bytes read_file(const fs::path& path, std::uint64_t size_cap = kDefaultSizeCap);
void write_file(const fs::path& path, std::span<const std::uint8_t> bytes);

std::vector<AttentionRecord> read_attention(const fs::path& path);
void write_attention(const fs::path& path, std::span<const AttentionRecord> records);
PartAffinityMap read_affinity_map(const fs::path& path);
void write_affinity_map(const fs::path& path, const PartAffinityMap& map);

/// One-way import of a C-ordered little-endian float32/float64 .npy array of
/// shape (H, W, n) as an attention record.
AttentionRecord import_npy_attention(const fs::path& path, std::uint32_t t, std::uint32_t layer,
                                     std::uint32_t camera_id);

// Images: binary PPM (P6) for RGB, PGM (P5) for grayscale, maxval 255.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1;
    std::vector<std::uint8_t> pixels;
};

/// round(clamp(v, 0, 1) * 255).
std::uint8_t quantize(double v);
Bytes encode_image(const Image& image);
Image decode_image(std::span<const std::uint8_t> bytes);
Image grayscale_image(std::span<const double> values, std::size_t height, std::size_t width);
/// RGB image from an [h * w, 3] tensor.
Image rgb_image(const Tensor& rgb, std::size_t height, std::size_t width);
/// Fixed piecewise-linear heat colour table (black, purple, red, orange,
/// yellow, white at 0, 0.2, 0.4, 0.6, 0.8, 1).
Image heatmap_image(std::span<const double> values, std::size_t height, std::size_t width);
void write_image(const fs::path& path, const Image& image);

// Camera manifest: JSON array of {id, radius, elevation_deg, azimuth_deg, fov_deg}.
std::string encode_manifest(std::span<const CameraPose> poses);
std::vector<CameraPose> decode_manifest(const std::string& json);
std::vector<CameraPose> read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, std::span<const CameraPose> poses);

// Prompt spec: {"tokens": [...], "parts": [{"label": ..., "indices": [...]}]}.
std::string encode_prompt(const PromptSpec& prompt);
PromptSpec decode_prompt(const std::string& json);
PromptSpec read_prompt(const fs::path& path);

// Field checkpoint: JSON header at `path` plus `<path>.bin` holding f32
// weights (W1, b1, W2, b2) little-endian. Asset checkpoints have no labels.
void write_affinity_checkpoint(const fs::path& path, const AffinityField& field);
AffinityField read_affinity_checkpoint(const fs::path& path);
void write_asset_checkpoint(const fs::path& path, const AssetField& asset);
AssetField read_asset_checkpoint(const fs::path& path);

/// File-name-safe form of a part label (non-alphanumerics become '_').
std::string sanitize_label(const std::string& label);

}  // namespace partaff::io
