#pragma once

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "partaff/camera.hpp"
#include "partaff/extraction.hpp"
#include "partaff/modulation.hpp"
#include "partaff/schedule.hpp"
#include "partaff/tensor.hpp"

namespace partaff {

/// A noised render handed to a guidance model. Images are [h * w, 3].
struct GuidanceInput {
    const Tensor& x_t;
    std::size_t height;
    std::size_t width;
    std::uint32_t t;
    const NoiseSchedule& schedule;
    const CameraPose& pose;
};

/// Rendered part affinities (already resampled to h * w and clamped)
/// applied inside the guidance model's attention blocks.
struct AttentionModulation {
    ModulationConfig config;
    std::vector<std::vector<double>> affinity;
    std::vector<PartSpec> parts;
    bool cross_layer = true;
    bool self_layer = true;
};

/// Pre-softmax scores and attention of the last forward pass (for tests).
struct AttentionTrace {
    Tensor cross_scores;
    Tensor cross_attention;
    Tensor self_scores;
    Tensor self_attention;
};

/// Frozen denoiser eps_hat(x_t; t). Implementations are immutable after
/// construction, so predictions never alter the parameters.
class GuidanceModel {
public:
    virtual ~GuidanceModel() = default;

    virtual bool exposes_attention() const { return false; }
    /// Throws CapabilityError when `modulation` is set on a model without
    /// attention hooks.
    virtual Tensor predict_noise(const GuidanceInput& input, const AttentionModulation* modulation = nullptr,
                                 AttentionTrace* trace = nullptr) const = 0;
    virtual std::vector<Tensor> parameters() const { return {}; }
};

/// Renders the ground-truth image x* for a pose at a resolution.
using TargetRenderer = std::function<Tensor(const CameraPose&, std::size_t resolution)>;

/// eps_hat = (x_t - sqrt(ab) x*) / sqrt(1 - ab), where x* is the target for
/// the input pose.
class SyntheticOracleGuidance final : public GuidanceModel {
public:
    explicit SyntheticOracleGuidance(TargetRenderer target) : target_(std::move(target)) {}

    Tensor predict_noise(const GuidanceInput& input, const AttentionModulation* modulation = nullptr,
                         AttentionTrace* trace = nullptr) const override;

private:
    TargetRenderer target_;
};

using Rgb = std::array<double, 3>;

struct ToyAttentionConfig {
    std::vector<std::string> tokens;
    std::vector<PartSpec> parts;
    /// Value colour of each part's tokens; other tokens carry `neutral`.
    std::vector<Rgb> part_colors;
    Rgb neutral{0.5, 0.5, 0.5};
    std::size_t embed_dim = 8;
    double score_scale = 1.0;
    /// Weight of the self-attention mixing in the denoised estimate.
    double self_mix = 0.25;
    std::uint64_t seed = 0;
};

/// Single-view toy denoiser with one cross-attention block (pixels attend
/// to prompt tokens whose values are colours) and one self-attention block
/// over pixels. Its clean-image estimate is
///   x0 = (1 - mix) * A_cross V + mix * A_self (A_cross V)
/// and eps_hat = (x_t - sqrt(ab) x0) / sqrt(1 - ab).
class ToyAttentionGuidance final : public GuidanceModel {
public:
    explicit ToyAttentionGuidance(ToyAttentionConfig config);

    bool exposes_attention() const override { return true; }
    Tensor predict_noise(const GuidanceInput& input, const AttentionModulation* modulation = nullptr,
                         AttentionTrace* trace = nullptr) const override;
    std::vector<Tensor> parameters() const override;

    const ToyAttentionConfig& config() const { return config_; }
    /// Cross-attention scores [hw, n] for a noised image.
    Tensor cross_scores(const Tensor& x_t) const;
    /// Self-attention scores [hw, hw].
    Tensor self_scores(const Tensor& x_t, std::size_t height, std::size_t width) const;

private:
    ToyAttentionConfig config_;
    Tensor query_weights_;   // [4, d]
    Tensor token_keys_;      // [n, d]
    Tensor token_values_;    // [n, 3]
    Tensor feature_weights_; // [6, d]
    Tensor self_query_;      // [d, d]
    Tensor self_key_;        // [d, d]
};

}  // namespace partaff
