#include "partaff/gradcheck_suite.hpp"

#include <cmath>

#include "partaff/affinity_field.hpp"
#include "partaff/render.hpp"
#include "partaff/rng.hpp"
#include "partaff/sds.hpp"

namespace partaff {

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

/// Contracts a tensor-valued output against a fixed random weighting so
/// every output element contributes to the checked scalar.
Var contract(Tape& tape, Var out, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(out, tape.constant(random_tensor(rng, out.shape(), -1.0, 1.0))));
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed, const GradCheckOptions& options) {
    Rng rng(seed);
    std::vector<GradCheckCase> out;
    auto check = [&](std::string name, std::vector<Tensor> params, auto body) {
        const std::uint64_t cseed = rng.split(out.size()).uniform_int(0, 1u << 30);
        ScalarFn fn = [body, cseed](Tape& tape, std::span<const Var> p) { return contract(tape, body(tape, p), cseed); };
        out.push_back({std::move(name), finite_diff_check(fn, params, options)});
    };
    auto r = [&](Shape s, double lo = -1.0, double hi = 1.0) { return random_tensor(rng, std::move(s), lo, hi); };

    check("add", {r({3, 4}), r({3, 4})}, [](Tape&, std::span<const Var> p) { return add(p[0], p[1]); });
    check("add_row_broadcast", {r({3, 4}), r({4})}, [](Tape&, std::span<const Var> p) { return add(p[0], p[1]); });
    check("sub", {r({3, 4}), r({1})}, [](Tape&, std::span<const Var> p) { return sub(p[0], p[1]); });
    check("mul", {r({3, 4}), r({3, 4})}, [](Tape&, std::span<const Var> p) { return mul(p[0], p[1]); });
    check("mul_row_broadcast", {r({3, 4}), r({4})}, [](Tape&, std::span<const Var> p) { return mul(p[0], p[1]); });
    check("scale", {r({5})}, [](Tape&, std::span<const Var> p) { return scale(p[0], -2.5); });
    check("matmul", {r({3, 5}), r({5, 2})}, [](Tape&, std::span<const Var> p) { return matmul(p[0], p[1]); });
    check("dense", {r({4, 3}), r({3, 2}), r({2})},
          [](Tape&, std::span<const Var> p) { return dense(p[0], p[1], p[2]); });
    check("dense_relu", {r({4, 3}), r({3, 2}), r({2})},
          [](Tape&, std::span<const Var> p) { return dense(p[0], p[1], p[2], true); });
    check("relu", {r({4, 4})}, [](Tape&, std::span<const Var> p) { return relu(p[0]); });
    check("sigmoid", {r({4, 4}, -4, 4)}, [](Tape&, std::span<const Var> p) { return sigmoid(p[0]); });
    check("softplus", {r({4, 4}, -6, 6)}, [](Tape&, std::span<const Var> p) { return softplus(p[0]); });
    check("exp", {r({6})}, [](Tape&, std::span<const Var> p) { return exp(p[0]); });
    check("log", {r({6}, 0.2, 3.0)}, [](Tape&, std::span<const Var> p) { return log(p[0]); });
    check("sin", {r({6}, -3, 3)}, [](Tape&, std::span<const Var> p) { return sin(p[0]); });
    check("cos", {r({6}, -3, 3)}, [](Tape&, std::span<const Var> p) { return cos(p[0]); });
    check("sum", {r({2, 3})}, [](Tape&, std::span<const Var> p) { return sum(p[0]); });
    check("mean", {r({2, 3})}, [](Tape&, std::span<const Var> p) { return mean(p[0]); });
    check("softmax", {r({3, 5}, -2, 2)}, [](Tape&, std::span<const Var> p) { return softmax(p[0]); });
    check("mse", {r({3, 3}), r({3, 3})}, [](Tape&, std::span<const Var> p) { return mse(p[0], p[1]); });
    check("reshape", {r({2, 6})}, [](Tape&, std::span<const Var> p) { return reshape(p[0], {3, 4}); });
    check("slice_cols", {r({3, 5})}, [](Tape&, std::span<const Var> p) { return slice_cols(p[0], 1, 4); });
    check("concat_cols", {r({3, 2}), r({3, 3})},
          [](Tape&, std::span<const Var> p) { return concat_cols(std::vector<Var>{p[0], p[1]}); });

    {
        const std::size_t rays = 3, samples = 6;
        std::vector<double> delta{0.1, 0.25, 0.4};
        check("composite", {r({rays * samples}, 0.0, 4.0), r({rays * samples, 2}, 0.0, 1.0)},
              [delta](Tape&, std::span<const Var> p) { return composite(p[0], p[1], samples, delta, {0.3, 0.7}); });
    }

    CameraPose pose;
    pose.azimuth = 30.0;
    pose.elevation = 15.0;
    RenderConfig rc;
    rc.resolution = 3;
    rc.samples_per_ray = 8;

    {
        const auto field = AffinityField::init({"head", "body"}, 8, 2, seed + 1);
        const auto rays = rays_for(pose, rc.resolution);
        const RaySamples s = sample_rays(rays, rc);
        const Tensor encoded = encode_points(s.points, field.mlp.frequencies);
        Rng trng(seed + 2);
        const Tensor target = random_tensor(trng, {rays.size(), 2}, 0.0, 1.0);
        ScalarFn fn = [encoded, target, s](Tape& tape, std::span<const Var> w) {
            const auto f = eval_field(w, encoded);
            return mse(composite(f.density, f.emission, s.samples, s.delta), tape.constant(target));
        };
        out.push_back({"affinity_field_loss", finite_diff_check(fn, field.mlp.weights, options)});
    }

    {
        const auto asset = AssetField::init(8, 2, seed + 3);
        SdsConfig sc;
        sc.render = rc;
        sc.background = {0.2, 0.4, 0.6};
        const std::uint64_t cseed = seed + 4;
        ScalarFn fn = [asset, sc, pose, cseed](Tape& tape, std::span<const Var> w) {
            return contract(tape, render_asset(w, asset, pose, sc), cseed);
        };
        out.push_back({"asset_render", finite_diff_check(fn, asset.mlp.weights, options)});
    }
    return out;
}

}  // namespace partaff
