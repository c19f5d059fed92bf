#include "partaff/extraction.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "partaff/error.hpp"

namespace partaff {

void PartSpec::validate(std::size_t token_count) const {
    if (indices.empty()) throw ValidationError("part '" + label + "' has no token indices");
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= token_count) {
            throw ValidationError("part '" + label + "' token index " + std::to_string(indices[k]) +
                                  " out of range for " + std::to_string(token_count) + " tokens");
        }
        if (k > 0 && indices[k] <= indices[k - 1]) {
            throw ValidationError("part '" + label + "' indices must be strictly increasing");
        }
    }
}

void PromptSpec::validate() const {
    if (tokens.empty()) throw ValidationError("prompt has no tokens");
    std::set<std::string> labels;
    for (const auto& p : parts) {
        p.validate(tokens.size());
        if (!labels.insert(p.label).second) throw ValidationError("duplicate part label '" + p.label + "'");
    }
}

std::vector<std::string> whitespace_tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream is{std::string(text)};
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

PartSpec resolve_part_indices(std::span<const std::string> prompt_tokens, std::string_view phrase,
                              const Tokenizer& tokenizer) {
    const auto needle = tokenizer(phrase);
    if (needle.empty()) throw NotASubsequence("part phrase is empty");
    if (needle.size() <= prompt_tokens.size()) {
        for (std::size_t s = 0; s + needle.size() <= prompt_tokens.size(); ++s) {
            if (std::equal(needle.begin(), needle.end(), prompt_tokens.begin() + static_cast<std::ptrdiff_t>(s))) {
                PartSpec spec{std::string(phrase), {}};
                for (std::size_t k = 0; k < needle.size(); ++k) spec.indices.push_back(s + k);
                return spec;
            }
        }
    }
    throw NotASubsequence("part phrase '" + std::string(phrase) + "' is not a contiguous run of prompt tokens");
}

void ExtractionWindow::validate() const {
    if (!(t_start > t_end)) throw ValidationError("extraction window needs t_start > t_end");
    if (layers.empty()) throw ValidationError("extraction window has no layers");
}

bool ExtractionWindow::contains(std::uint32_t t, std::uint32_t layer) const {
    return t >= t_end && t <= t_start && std::find(layers.begin(), layers.end(), layer) != layers.end();
}

void AttentionRecord::validate() const {
    const auto expected = static_cast<std::size_t>(height) * width * tokens;
    if (expected != values.size()) {
        throw ValidationError("attention record holds " + std::to_string(values.size()) + " values, expected " +
                              std::to_string(expected));
    }
    for (float v : values) {
        if (!std::isfinite(v) || v < 0.0f) throw ValidationError("attention values must be finite and >= 0");
    }
}

double PartAffinityMap::max_value() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, v);
    return m;
}

PartAffinityMap aggregate(std::span<const AttentionRecord> records, const ExtractionWindow& window,
                          const PartSpec& part) {
    window.validate();
    if (records.empty()) throw ValidationError("aggregate: no records");
    const auto& ref = records.front();
    for (const auto& r : records) {
        if (r.camera_id != ref.camera_id) throw ValidationError("aggregate: records span several cameras");
        if (r.height != ref.height || r.width != ref.width || r.tokens != ref.tokens) {
            throw ValidationError("aggregate: records have differing shapes");
        }
        r.validate();
    }
    part.validate(ref.tokens);

    std::vector<const AttentionRecord*> selected;
    for (const auto& r : records) {
        if (window.contains(r.t, r.layer)) selected.push_back(&r);
    }
    if (selected.empty()) throw ValidationError("aggregate: no record falls inside the extraction window");
    std::sort(selected.begin(), selected.end(), [](const AttentionRecord* a, const AttentionRecord* b) {
        return a->t != b->t ? a->t < b->t : a->layer < b->layer;
    });
    for (std::size_t k = 1; k < selected.size(); ++k) {
        if (selected[k]->t == selected[k - 1]->t && selected[k]->layer == selected[k - 1]->layer) {
            throw ValidationError("aggregate: duplicate record for t=" + std::to_string(selected[k]->t) +
                                  " layer=" + std::to_string(selected[k]->layer));
        }
    }

    const std::size_t pixels = static_cast<std::size_t>(ref.height) * ref.width;
    const std::size_t n = ref.tokens;
    std::vector<double> acc(pixels, 0.0);
    for (const auto* r : selected) {
        const float* v = r->values.data();
        for (std::size_t j = 0; j < pixels; ++j) {
            for (auto i : part.indices) acc[j] += static_cast<double>(v[j * n + i]);
        }
    }
    const double count = static_cast<double>(selected.size() * part.indices.size());
    for (auto& a : acc) a /= count;
    return PartAffinityMap{part.label, ref.camera_id, ref.height, ref.width, std::move(acc)};
}

PartAffinityMap normalize(PartAffinityMap map) {
    for (double v : map.values) {
        if (!std::isfinite(v) || v < 0.0) throw ValidationError("normalize: values must be finite and >= 0");
    }
    const double m = map.max_value();
    if (m > 0.0) {
        for (auto& v : map.values) v /= m;
    }
    return map;
}

}  // namespace partaff
