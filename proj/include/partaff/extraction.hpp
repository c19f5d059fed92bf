#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace partaff {

/// A part phrase and the positions of its tokens in the prompt.
struct PartSpec {
    std::string label;
    std::vector<std::size_t> indices;

    /// Non-empty, strictly increasing, every index < token_count.
    void validate(std::size_t token_count) const;
};

struct PromptSpec {
    std::vector<std::string> tokens;
    std::vector<PartSpec> parts;

    void validate() const;
};

using Tokenizer = std::function<std::vector<std::string>(std::string_view)>;

std::vector<std::string> whitespace_tokenize(std::string_view text);

/// Indices of the first contiguous occurrence of `phrase`'s tokens inside
/// `prompt_tokens`. Throws NotASubsequence when there is none.
PartSpec resolve_part_indices(std::span<const std::string> prompt_tokens, std::string_view phrase,
                              const Tokenizer& tokenizer = whitespace_tokenize);

/// Timestep interval [t_end, t_start] and the layers whose attention is kept.
struct ExtractionWindow {
    std::uint32_t t_start = 450;
    std::uint32_t t_end = 100;
    std::vector<std::uint32_t> layers{11};

    void validate() const;
    bool contains(std::uint32_t t, std::uint32_t layer) const;
};

/// One captured cross-attention tensor, spatial-major with the token index
/// varying fastest: values[(y * width + x) * tokens + i].
struct AttentionRecord {
    std::uint32_t t = 0;
    std::uint32_t layer = 0;
    std::uint32_t camera_id = 0;
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t tokens = 0;
    std::vector<float> values;

    void validate() const;
};

struct PartAffinityMap {
    std::string part_label;
    std::uint32_t camera_id = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;

    double max_value() const;
};

/// Mean of the token slices of `part` over every record inside `window`.
/// Selected records are summed in (t, layer, token) ascending order.
PartAffinityMap aggregate(std::span<const AttentionRecord> records, const ExtractionWindow& window,
                          const PartSpec& part);

/// Divides by the map maximum; an all-zero map is returned unchanged.
PartAffinityMap normalize(PartAffinityMap map);

}  // namespace partaff
