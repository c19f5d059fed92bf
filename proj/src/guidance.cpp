#include "partaff/guidance.hpp"

#include <Eigen/Core>
#include <cmath>

#include "partaff/error.hpp"
#include "partaff/rng.hpp"

namespace partaff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

Tensor random_tensor(Rng& rng, Shape shape, double scale) {
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

Tensor from_matrix(const RowMat& m) {
    std::vector<double> v(m.data(), m.data() + m.size());
    return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(v));
}

Tensor noise_from_estimate(const GuidanceInput& in, const Tensor& x0) {
    const double ab = in.schedule.alpha(in.t);
    if (ab >= 1.0) throw DomainError("guidance is undefined at alpha_bar = 1 (t = 0)");
    const double a = std::sqrt(ab);
    const double inv = 1.0 / std::sqrt(1.0 - ab);
    std::vector<double> eps(in.x_t.size());
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = (in.x_t[i] - a * x0[i]) * inv;
    return Tensor::scratch(in.x_t.shape(), std::move(eps));
}

}  // namespace

Tensor SyntheticOracleGuidance::predict_noise(const GuidanceInput& input, const AttentionModulation* modulation,
                                              AttentionTrace*) const {
    if (modulation) throw CapabilityError("oracle guidance has no attention hooks");
    if (input.height != input.width) throw ShapeError("oracle guidance expects square renders");
    const Tensor target = target_(input.pose, input.height);
    if (target.shape() != input.x_t.shape()) throw ShapeError("oracle target shape differs from the render");
    return noise_from_estimate(input, target);
}

ToyAttentionGuidance::ToyAttentionGuidance(ToyAttentionConfig config) : config_(std::move(config)) {
    const std::size_t n = config_.tokens.size();
    const std::size_t d = config_.embed_dim;
    if (n == 0 || d == 0) throw ValidationError("toy guidance needs tokens and a positive embedding size");
    if (config_.part_colors.size() != config_.parts.size()) {
        throw ValidationError("toy guidance needs one colour per part");
    }
    PromptSpec{config_.tokens, config_.parts}.validate();
    Rng rng(config_.seed);
    query_weights_ = random_tensor(rng, {4, d}, 1.0);
    token_keys_ = random_tensor(rng, {n, d}, 1.0);
    feature_weights_ = random_tensor(rng, {6, d}, 1.0);
    self_query_ = random_tensor(rng, {d, d}, 1.0 / std::sqrt(static_cast<double>(d)));
    self_key_ = random_tensor(rng, {d, d}, 1.0 / std::sqrt(static_cast<double>(d)));
    std::vector<double> values;
    for (std::size_t i = 0; i < n; ++i) {
        Rgb c = config_.neutral;
        for (std::size_t p = 0; p < config_.parts.size(); ++p) {
            for (auto idx : config_.parts[p].indices) {
                if (idx == i) c = config_.part_colors[p];
            }
        }
        values.insert(values.end(), c.begin(), c.end());
    }
    token_values_ = Tensor({n, 3}, std::move(values));
}

std::vector<Tensor> ToyAttentionGuidance::parameters() const {
    return {query_weights_, token_keys_, token_values_, feature_weights_, self_query_, self_key_};
}

Tensor ToyAttentionGuidance::cross_scores(const Tensor& x_t) const {
    const std::size_t hw = x_t.size() / 3;
    const std::size_t d = config_.embed_dim;
    RowMat feats(hw, 4);
    for (std::size_t j = 0; j < hw; ++j) {
        for (int c = 0; c < 3; ++c) feats(j, c) = x_t[j * 3 + c];
        feats(j, 3) = 1.0;
    }
    const RowMat q = feats * ConstMap(query_weights_.raw(), 4, d);
    const RowMat s = (q * ConstMap(token_keys_.raw(), config_.tokens.size(), d).transpose()) *
                     (config_.score_scale / std::sqrt(static_cast<double>(d)));
    return from_matrix(s);
}

Tensor ToyAttentionGuidance::self_scores(const Tensor& x_t, std::size_t height, std::size_t width) const {
    const std::size_t hw = height * width;
    const std::size_t d = config_.embed_dim;
    RowMat feats(hw, 6);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const std::size_t j = y * width + x;
            for (int c = 0; c < 3; ++c) feats(j, c) = x_t[j * 3 + c];
            feats(j, 3) = 1.0;
            feats(j, 4) = (static_cast<double>(y) + 0.5) / static_cast<double>(height) - 0.5;
            feats(j, 5) = (static_cast<double>(x) + 0.5) / static_cast<double>(width) - 0.5;
        }
    }
    const RowMat f = feats * ConstMap(feature_weights_.raw(), 6, d);
    const RowMat q = f * ConstMap(self_query_.raw(), d, d);
    const RowMat k = f * ConstMap(self_key_.raw(), d, d);
    const RowMat s = (q * k.transpose()) * (config_.score_scale / std::sqrt(static_cast<double>(d)));
    return from_matrix(s);
}

Tensor ToyAttentionGuidance::predict_noise(const GuidanceInput& input, const AttentionModulation* modulation,
                                           AttentionTrace* trace) const {
    const std::size_t hw = input.height * input.width;
    if (input.x_t.size() != hw * 3) throw ShapeError("toy guidance input must be [h*w, 3]");

    const Tensor s_cross = cross_scores(input.x_t);
    const Tensor s_self = self_scores(input.x_t, input.height, input.width);
    ModulatedAttention cross{s_cross, Tensor()};
    ModulatedAttention self{s_self, Tensor()};
    if (modulation && modulation->cross_layer) {
        cross = modulate_cross(s_cross, modulation->affinity, modulation->parts, modulation->config.alpha_cross);
    } else {
        cross.attention = softmax_rows(s_cross);
    }
    if (modulation && modulation->self_layer) {
        self = modulate_self(s_self, modulation->affinity, modulation->config.alpha_self);
    } else {
        self.attention = softmax_rows(s_self);
    }

    const std::size_t n = config_.tokens.size();
    const RowMat x0_cross = ConstMap(cross.attention.raw(), hw, n) * ConstMap(token_values_.raw(), n, 3);
    const RowMat mixed = ConstMap(self.attention.raw(), hw, hw) * x0_cross;
    const RowMat x0 = (1.0 - config_.self_mix) * x0_cross + config_.self_mix * mixed;
    if (trace) *trace = AttentionTrace{cross.scores, cross.attention, self.scores, self.attention};
    return noise_from_estimate(input, from_matrix(x0));
}

}  // namespace partaff
