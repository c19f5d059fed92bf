#include "partaff/affinity_field.hpp"

#include <algorithm>
#include <map>

#include "partaff/adam.hpp"
#include "partaff/error.hpp"

namespace partaff {

void AffinityField::validate() const {
    mlp.validate();
    if (mlp.outputs != 1 + part_labels.size()) {
        throw ValidationError("affinity field outputs must equal 1 + part count");
    }
}

AffinityField AffinityField::init(std::vector<std::string> labels, std::size_t hidden, std::size_t frequencies,
                                  std::uint64_t seed) {
    AffinityField f;
    f.mlp = MlpField::init(frequencies, hidden, 1 + labels.size(), seed);
    f.part_labels = std::move(labels);
    return f;
}

FieldSample field_eval(const AffinityField& field, const Vec3& point) {
    const double xyz[3] = {point.x(), point.y(), point.z()};
    std::vector<double> density, emission;
    eval_field_values(field.mlp, xyz, density, emission);
    return FieldSample{density[0], std::move(emission)};
}

namespace {

PointField mlp_point_field(const MlpField& mlp) {
    return [&mlp](std::span<const double> xyz, std::vector<double>& density, std::vector<double>& emission) {
        eval_field_values(mlp, xyz, density, emission);
    };
}

}  // namespace

const CameraPose& find_pose(std::span<const CameraPose> poses, int id) {
    for (const auto& p : poses) {
        if (p.id == id) return p;
    }
    throw ValidationError("no camera pose with id " + std::to_string(id));
}

RenderedAffinity render_affinity(const AffinityField& field, const CameraPose& pose, const RenderConfig& config) {
    field.validate();
    const auto rays = rays_for(pose, config.resolution);
    const std::size_t parts = field.part_labels.size();
    const auto flat = render_values(mlp_point_field(field.mlp), rays, parts, config);
    RenderedAffinity out;
    out.camera_id = pose.id;
    out.resolution = config.resolution;
    out.part_labels = field.part_labels;
    out.values.assign(parts, std::vector<double>(rays.size()));
    for (std::size_t r = 0; r < rays.size(); ++r) {
        for (std::size_t p = 0; p < parts; ++p) out.values[p][r] = std::clamp(flat[r * parts + p], 0.0, 1.0);
    }
    return out;
}

std::vector<CameraMaps> group_maps(std::span<const PartAffinityMap> maps, std::vector<std::string>& labels) {
    if (maps.empty()) throw ValidationError("no affinity maps");
    if (labels.empty()) {
        for (const auto& m : maps) {
            if (std::find(labels.begin(), labels.end(), m.part_label) == labels.end()) labels.push_back(m.part_label);
        }
    }
    std::map<int, CameraMaps> by_camera;
    const std::size_t res = maps.front().height;
    for (const auto& m : maps) {
        if (m.height != res || m.width != res) throw ValidationError("affinity maps must share one square resolution");
        if (m.values.size() != m.height * m.width) throw ValidationError("affinity map payload size mismatch");
        const auto it = std::find(labels.begin(), labels.end(), m.part_label);
        if (it == labels.end()) throw ValidationError("unexpected part label '" + m.part_label + "'");
        auto& cm = by_camera[static_cast<int>(m.camera_id)];
        cm.camera_id = static_cast<int>(m.camera_id);
        cm.resolution = res;
        cm.parts.resize(labels.size(), nullptr);
        auto& slot = cm.parts[static_cast<std::size_t>(it - labels.begin())];
        if (slot) throw ValidationError("duplicate map for part '" + m.part_label + "'");
        slot = &m;
    }
    std::vector<CameraMaps> out;
    for (auto& [id, cm] : by_camera) {
        for (std::size_t p = 0; p < labels.size(); ++p) {
            if (!cm.parts[p]) {
                throw ValidationError("inconsistent part sets: camera " + std::to_string(id) + " lacks '" +
                                      labels[p] + "'");
            }
        }
        out.push_back(std::move(cm));
    }
    return out;
}

void AffinityTrainConfig::validate() const {
    if (steps < 1) throw ValidationError("affinity fit needs at least one step");
    if (rays_per_batch < 1) throw ValidationError("rays_per_batch must be positive");
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
    render.validate();
}

FitResult fit_affinity(std::span<const PartAffinityMap> maps, std::span<const CameraPose> poses,
                       const AffinityTrainConfig& config, const std::optional<AffinityField>& init) {
    config.validate();
    std::vector<std::string> labels = init ? init->part_labels : std::vector<std::string>{};
    auto cams = group_maps(maps, labels);
    std::erase_if(cams, [&](const CameraMaps& c) {
        return std::find(config.heldout_ids.begin(), config.heldout_ids.end(), c.camera_id) !=
               config.heldout_ids.end();
    });
    if (cams.empty()) throw ValidationError("no training views left after removing held-out cameras");

    const std::size_t parts = labels.size();
    const std::size_t res = cams.front().resolution;
    const std::size_t pixels = res * res;
    std::vector<Ray> rays;
    std::vector<double> targets;
    rays.reserve(cams.size() * pixels);
    targets.reserve(cams.size() * pixels * parts);
    for (const auto& c : cams) {
        const auto r = rays_for(find_pose(poses, c.camera_id), res);
        rays.insert(rays.end(), r.begin(), r.end());
        for (std::size_t j = 0; j < pixels; ++j) {
            for (std::size_t p = 0; p < parts; ++p) targets.push_back(c.parts[p]->values[j]);
        }
    }

    FitResult result;
    result.field = init ? *init : AffinityField::init(labels, config.hidden, config.frequencies, config.seed);
    result.field.validate();
    Rng rng(config.seed ^ 0xA5F1E1Dull);
    AdamState adam(config.learning_rate);
    const std::size_t batch = std::min(config.rays_per_batch, rays.size());
    std::vector<Ray> batch_rays(batch);
    std::vector<double> batch_targets(batch * parts);
    result.loss_trace.reserve(config.steps);

    for (std::size_t step = 0; step < config.steps; ++step) {
        for (std::size_t b = 0; b < batch; ++b) {
            const auto k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(rays.size()) - 1));
            batch_rays[b] = rays[k];
            std::copy_n(targets.begin() + static_cast<std::ptrdiff_t>(k * parts), parts,
                        batch_targets.begin() + static_cast<std::ptrdiff_t>(b * parts));
        }
        const RaySamples s = sample_rays(batch_rays, config.render, &rng);

        Tape tape;
        std::vector<Var> w;
        for (const auto& t : result.field.mlp.weights) w.push_back(tape.parameter(t));
        const auto out = eval_field(w, encode_points(s.points, result.field.mlp.frequencies),
                                    config.render.density_floor);
        const Var rendered = composite(out.density, out.emission, s.samples, s.delta);
        const Var loss = mse(rendered, tape.constant(Tensor({batch, parts}, batch_targets)));
        result.loss_trace.push_back(loss.value().item());
        const auto grads = tape.backward(loss);
        adam_step(result.field.mlp.weights, grads, adam);
    }
    result.final_loss = result.loss_trace.back();
    return result;
}

HeldoutReport evaluate_heldout(const AffinityField& field, std::span<const PartAffinityMap> maps,
                               std::span<const CameraPose> poses, const RenderConfig& config) {
    if (maps.empty()) throw ValidationError("empty held-out set");
    std::vector<std::string> labels = field.part_labels;
    const auto cams = group_maps(maps, labels);
    HeldoutReport report;
    double total = 0.0;
    for (const auto& c : cams) {
        RenderConfig rc = config;
        rc.resolution = c.resolution;
        const auto rendered = render_affinity(field, find_pose(poses, c.camera_id), rc);
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t p = 0; p < labels.size(); ++p) {
            for (std::size_t j = 0; j < rendered.values[p].size(); ++j) {
                const double d = rendered.values[p][j] - c.parts[p]->values[j];
                acc += d * d;
                ++count;
            }
        }
        const double view_mse = acc / static_cast<double>(count);
        report.per_view.emplace_back(c.camera_id, view_mse);
        total += view_mse;
    }
    report.mse = total / static_cast<double>(cams.size());
    return report;
}

}  // namespace partaff
