#include "partaff/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <set>
#include <type_traits>

#include "partaff/error.hpp"
#include "partaff/io.hpp"

namespace partaff {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Reads keys from a JSON object and rejects any it did not consume.
class Fields {
public:
    Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ValidationError(where_ + ": expected an object");
    }
    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ValidationError(where_ + ": unknown key '" + k + "'");
        }
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        if constexpr (std::is_unsigned_v<T>) {
            const auto& v = j_.at(key);
            if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
                throw ValidationError(where_ + "." + key + ": expected a non-negative integer");
            }
        }
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ValidationError(where_ + "." + key + ": " + e.what());
        }
    }
    const json* sub(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

json decimate(const std::vector<double>& trace, std::size_t every) {
    json out = json::array();
    for (std::size_t i = 0; i < trace.size(); i += every) out.push_back(trace[i]);
    if (!trace.empty() && (trace.size() - 1) % every != 0) out.push_back(trace.back());
    return out;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void PipelineConfig::validate() const {
    if (partial_steps < 1 || fit_steps < 1 || modulated_steps < 1) throw ValidationError("stage budgets must be >= 1");
    if (extraction_views < 1 || eval_views < 1) throw ValidationError("view counts must be >= 1");
    window.validate();
    sds.validate();
    affinity.validate();
    affinity_render.validate();
    modulation.validate();
    if (attention_source == AttentionSource::Files && attention_dir.empty()) {
        throw ValidationError("file-backed attention needs attention.dir");
    }
}

PipelineConfig pipeline_config_from_json(const json& j) {
    PipelineConfig c;
    Fields top(j, "config");
    top.get("seed", c.seed);
    top.get("eval_views", c.eval_views);
    if (const auto* b = top.sub("budgets")) {
        Fields f(*b, "budgets");
        f.get("partial", c.partial_steps);
        f.get("fit", c.fit_steps);
        f.get("modulated", c.modulated_steps);
        f.finish();
    }
    if (const auto* e = top.sub("extraction")) {
        Fields f(*e, "extraction");
        f.get("views", c.extraction_views);
        f.get("t_start", c.window.t_start);
        f.get("t_end", c.window.t_end);
        f.get("layers", c.window.layers);
        f.finish();
    }
    if (const auto* s = top.sub("sds")) {
        Fields f(*s, "sds");
        f.get("resolution", c.sds.render.resolution);
        f.get("samples_per_ray", c.sds.render.samples_per_ray);
        f.get("learning_rate", c.sds.learning_rate);
        f.get("range_fraction", c.sds.range_fraction);
        f.get("radius", c.sds.radius);
        f.get("fov", c.sds.fov);
        f.get("background", c.sds.background);
        std::vector<double> elev{c.sds.elevations.min_deg, c.sds.elevations.max_deg};
        f.get("elevation", elev);
        if (elev.size() != 2) throw ValidationError("sds.elevation must be [min, max]");
        c.sds.elevations = {elev[0], elev[1]};
        std::string weight = "unit";
        f.get("weight", weight);
        if (weight == "unit") {
            c.timestep_weight = TimestepWeight::Unit;
        } else if (weight == "one_minus_alpha_bar") {
            c.timestep_weight = TimestepWeight::OneMinusAlphaBar;
        } else {
            throw ValidationError("sds.weight must be 'unit' or 'one_minus_alpha_bar'");
        }
        f.finish();
    }
    if (const auto* a = top.sub("asset")) {
        Fields f(*a, "asset");
        f.get("hidden", c.asset_hidden);
        f.get("frequencies", c.asset_frequencies);
        f.finish();
    }
    if (const auto* a = top.sub("affinity")) {
        Fields f(*a, "affinity");
        f.get("learning_rate", c.affinity.learning_rate);
        f.get("rays_per_batch", c.affinity.rays_per_batch);
        f.get("hidden", c.affinity.hidden);
        f.get("frequencies", c.affinity.frequencies);
        f.get("samples_per_ray", c.affinity.render.samples_per_ray);
        f.finish();
    }
    if (const auto* r = top.sub("affinity_render")) {
        Fields f(*r, "affinity_render");
        f.get("resolution", c.affinity_render.resolution);
        f.get("samples_per_ray", c.affinity_render.samples_per_ray);
        f.finish();
    }
    if (const auto* m = top.sub("modulation")) {
        Fields f(*m, "modulation");
        f.get("alpha_cross", c.modulation.alpha_cross);
        f.get("alpha_self", c.modulation.alpha_self);
        f.get("floor", c.modulation.floor);
        f.finish();
    }
    if (const auto* s = top.sub("synthetic_attention")) {
        Fields f(*s, "synthetic_attention");
        f.get("resolution", c.synthetic.resolution);
        f.get("blur_sigma", c.synthetic.blur_sigma);
        f.get("timestep_stride", c.synthetic.timestep_stride);
        f.get("noise", c.synthetic.noise);
        f.finish();
    }
    if (const auto* t = top.sub("toy_guidance")) {
        Fields f(*t, "toy_guidance");
        f.get("score_scale", c.toy_score_scale);
        f.get("self_mix", c.toy_self_mix);
        f.get("embed_dim", c.toy_embed_dim);
        f.finish();
    }
    if (const auto* a = top.sub("attention")) {
        Fields f(*a, "attention");
        std::string mode = "synthetic", dir, prompt;
        f.get("mode", mode);
        f.get("dir", dir);
        f.get("prompt", prompt);
        if (mode == "synthetic") {
            c.attention_source = AttentionSource::Synthetic;
        } else if (mode == "files") {
            c.attention_source = AttentionSource::Files;
        } else {
            throw ValidationError("attention.mode must be 'synthetic' or 'files'");
        }
        c.attention_dir = dir;
        c.prompt_path = prompt;
        f.finish();
    }
    std::string out = c.output_dir.string();
    top.get("output_dir", out);
    c.output_dir = out;
    top.finish();
    c.affinity.seed = c.seed;
    c.affinity.steps = c.fit_steps;
    c.synthetic.seed = c.seed;
    c.validate();
    return c;
}

json pipeline_config_to_json(const PipelineConfig& c) {
    return json{
        {"seed", c.seed},
        {"eval_views", c.eval_views},
        {"budgets", {{"partial", c.partial_steps}, {"fit", c.fit_steps}, {"modulated", c.modulated_steps}}},
        {"extraction",
         {{"views", c.extraction_views},
          {"t_start", c.window.t_start},
          {"t_end", c.window.t_end},
          {"layers", c.window.layers}}},
        {"sds",
         {{"resolution", c.sds.render.resolution},
          {"samples_per_ray", c.sds.render.samples_per_ray},
          {"learning_rate", c.sds.learning_rate},
          {"range_fraction", c.sds.range_fraction},
          {"radius", c.sds.radius},
          {"fov", c.sds.fov},
          {"background", c.sds.background},
          {"elevation", {c.sds.elevations.min_deg, c.sds.elevations.max_deg}},
          {"weight", c.timestep_weight == TimestepWeight::Unit ? "unit" : "one_minus_alpha_bar"}}},
        {"asset", {{"hidden", c.asset_hidden}, {"frequencies", c.asset_frequencies}}},
        {"affinity",
         {{"learning_rate", c.affinity.learning_rate},
          {"rays_per_batch", c.affinity.rays_per_batch},
          {"hidden", c.affinity.hidden},
          {"frequencies", c.affinity.frequencies},
          {"samples_per_ray", c.affinity.render.samples_per_ray}}},
        {"affinity_render",
         {{"resolution", c.affinity_render.resolution}, {"samples_per_ray", c.affinity_render.samples_per_ray}}},
        {"modulation",
         {{"alpha_cross", c.modulation.alpha_cross},
          {"alpha_self", c.modulation.alpha_self},
          {"floor", c.modulation.floor}}},
        {"synthetic_attention",
         {{"resolution", c.synthetic.resolution},
          {"blur_sigma", c.synthetic.blur_sigma},
          {"timestep_stride", c.synthetic.timestep_stride},
          {"noise", c.synthetic.noise}}},
        {"toy_guidance",
         {{"score_scale", c.toy_score_scale}, {"self_mix", c.toy_self_mix}, {"embed_dim", c.toy_embed_dim}}},
        {"attention",
         {{"mode", c.attention_source == AttentionSource::Synthetic ? "synthetic" : "files"},
          {"dir", c.attention_dir.string()},
          {"prompt", c.prompt_path.string()}}},
        {"output_dir", c.output_dir.string()},
    };
}

bool ColorAssignment::all_assigned() const {
    return !closer_to_own.empty() && std::all_of(closer_to_own.begin(), closer_to_own.end(), [](bool b) { return b; });
}

ColorAssignment measure_color_assignment(const AssetField& asset, const AffinityField& affinity,
                                         std::span<const Rgb> colors, std::span<const CameraPose> poses,
                                         const SdsConfig& sds, const RenderConfig& affinity_render, double floor) {
    const std::size_t parts = affinity.part_labels.size();
    if (colors.size() != parts) throw ValidationError("one colour per part is required");
    const std::size_t res = sds.render.resolution;
    std::vector<Rgb> sum(parts, Rgb{0, 0, 0});
    ColorAssignment out;
    out.region_pixels.assign(parts, 0);
    for (const auto& pose : poses) {
        const Tensor img = render_asset_values(asset, pose, sds);
        const auto m = affinity_vectors(affinity, pose, affinity_render, res, res, floor);
        const auto regions = argmax_regions(m);
        for (std::size_t p = 0; p < parts; ++p) {
            for (std::size_t j = 0; j < res * res; ++j) {
                if (!regions[p][j]) continue;
                for (int c = 0; c < 3; ++c) sum[p][c] += img[j * 3 + c];
                ++out.region_pixels[p];
            }
        }
    }
    for (std::size_t p = 0; p < parts; ++p) {
        Rgb mean{0, 0, 0};
        if (out.region_pixels[p] > 0) {
            for (int c = 0; c < 3; ++c) mean[c] = sum[p][c] / static_cast<double>(out.region_pixels[p]);
        }
        out.mean_color.push_back(mean);
        std::vector<double> d;
        for (const auto& col : colors) {
            double acc = 0.0;
            for (int c = 0; c < 3; ++c) acc += (mean[c] - col[c]) * (mean[c] - col[c]);
            d.push_back(std::sqrt(acc));
        }
        bool own = out.region_pixels[p] > 0;
        for (std::size_t q = 0; q < parts; ++q) {
            if (q != p) own = own && d[p] < d[q];
        }
        out.distance.push_back(std::move(d));
        out.closer_to_own.push_back(own);
    }
    return out;
}

std::vector<CameraPose> evaluation_poses(const PipelineConfig& config) {
    auto poses = sample_sphere_poses(config.eval_views, config.sds.radius, config.sds.elevations,
                                     config.seed + 0x5EEDull, config.sds.fov);
    const double shift = 180.0 / static_cast<double>(config.extraction_views);
    for (auto& p : poses) {
        p.azimuth += shift;
        p.id += 100000;
    }
    return poses;
}

std::vector<Rgb> part_colors(const PipelineState& state) {
    std::vector<Rgb> colors;
    static const Rgb palette[] = {{0.9, 0.15, 0.1}, {0.1, 0.2, 0.9}, {0.1, 0.8, 0.2}, {0.9, 0.8, 0.1}};
    for (std::size_t p = 0; p < state.prompt.parts.size(); ++p) {
        const auto& label = state.prompt.parts[p].label;
        const auto it = std::find(state.scene.labels.begin(), state.scene.labels.end(), label);
        colors.push_back(it != state.scene.labels.end()
                             ? state.scene.colors[static_cast<std::size_t>(it - state.scene.labels.begin())]
                             : palette[p % 4]);
    }
    return colors;
}

ToyAttentionGuidance make_toy_guidance(const PipelineConfig& config, const PipelineState& state) {
    ToyAttentionConfig tc;
    tc.tokens = state.prompt.tokens;
    tc.parts = state.prompt.parts;
    tc.part_colors = part_colors(state);
    tc.embed_dim = config.toy_embed_dim;
    tc.score_scale = config.toy_score_scale;
    tc.self_mix = config.toy_self_mix;
    tc.seed = config.seed + 7;
    return ToyAttentionGuidance(std::move(tc));
}

PipelineState init_state(const PipelineConfig& config) {
    PipelineState s;
    s.schedule.weight = config.timestep_weight;
    s.asset = AssetField::init(config.asset_hidden, config.asset_frequencies, config.seed);
    s.adam = AdamState(config.sds.learning_rate);
    s.streams = SdsStreams::from_seed(config.seed);
    s.extraction_poses = sample_sphere_poses(config.extraction_views, config.sds.radius, config.sds.elevations,
                                             config.seed, config.sds.fov);
    s.eval_poses = evaluation_poses(config);
    s.prompt = synthetic_prompt(s.scene);
    return s;
}

json run_stage1(const PipelineConfig& config, PipelineState& state) {
    const auto& scene = state.scene;
    const auto background = config.sds.background;
    const RenderConfig target_rc = config.sds.render;
    const TargetRenderer shape_target = [&scene, background, target_rc](const CameraPose& pose, std::size_t res) {
        RenderConfig rc = target_rc;
        rc.resolution = res;
        return render_scene_rgb(scene, pose, rc, true, background);
    };
    const SyntheticOracleGuidance guidance(shape_target);
    const double before = photometric_error(state.asset, state.eval_poses, shape_target, config.sds);
    auto result = partial_optimize(state.asset, state.adam, guidance, state.schedule, *state.streams, config.sds,
                                   config.partial_steps, state.extraction_poses);
    state.partial_views = std::move(result.views);
    const double after = photometric_error(state.asset, state.eval_poses, shape_target, config.sds);
    return json{{"steps", config.partial_steps},
                {"residual_rms_trace", decimate(result.residual_trace, 50)},
                {"photometric_mse_before", before},
                {"photometric_mse_after", after},
                {"extraction_views", state.partial_views.size()}};
}

json run_stage2(const PipelineConfig& config, PipelineState& state) {
    std::map<std::uint32_t, std::vector<AttentionRecord>> by_camera;
    std::size_t record_count = 0;
    if (config.attention_source == AttentionSource::Synthetic) {
        for (const auto& pose : state.extraction_poses) {
            auto recs = synthetic_attention(state.scene, pose, state.prompt, config.window, config.synthetic);
            record_count += recs.size();
            by_camera[static_cast<std::uint32_t>(pose.id)] = std::move(recs);
        }
    } else {
        if (!fs::is_directory(config.attention_dir)) {
            throw ValidationError("attention directory " + config.attention_dir.string() + " does not exist");
        }
        if (config.prompt_path.empty()) throw ValidationError("file-backed attention needs attention.prompt");
        state.prompt = io::read_prompt(config.prompt_path);
        const auto manifest = config.attention_dir / "cameras.json";
        if (fs::exists(manifest)) state.extraction_poses = io::read_manifest(manifest);
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(config.attention_dir)) {
            if (e.path().extension() == ".pam") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw ValidationError("no .pam attention containers in " + config.attention_dir.string());
        for (const auto& f : files) {
            for (auto& r : io::read_attention(f)) {
                ++record_count;
                by_camera[r.camera_id].push_back(std::move(r));
            }
        }
    }

    state.maps.clear();
    for (const auto& [camera, records] : by_camera) {
        for (const auto& part : state.prompt.parts) {
            state.maps.push_back(normalize(aggregate(records, config.window, part)));
        }
    }
    for (const auto& m : state.maps) {
        io::write_affinity_map(config.output_dir / "maps" /
                                   (io::sanitize_label(m.part_label) + "_cam" + std::to_string(m.camera_id) + ".paf"),
                               m);
    }
    io::write_manifest(config.output_dir / "cameras.json", state.extraction_poses);
    const auto prompt_text = io::encode_prompt(state.prompt) + "\n";
    io::write_file(config.output_dir / "prompt.json", io::Bytes(prompt_text.begin(), prompt_text.end()));
    return json{{"records", record_count}, {"cameras", by_camera.size()}, {"maps", state.maps.size()}};
}

json run_stage3(const PipelineConfig& config, PipelineState& state) {
    AffinityTrainConfig tc = config.affinity;
    tc.steps = config.fit_steps;
    tc.seed = config.seed;
    auto fit = fit_affinity(state.maps, state.extraction_poses, tc);
    state.affinity = std::move(fit.field);
    io::write_affinity_checkpoint(config.output_dir / "affinity.json", *state.affinity);

    json iou = json::array();
    const bool synthetic = config.attention_source == AttentionSource::Synthetic;
    for (const auto& pose : state.eval_poses) {
        const auto rendered = render_affinity(*state.affinity, pose, config.affinity_render);
        for (std::size_t p = 0; p < rendered.values.size(); ++p) {
            io::write_image(config.output_dir / "heatmaps" /
                                (io::sanitize_label(rendered.part_labels[p]) + "_eval" +
                                 std::to_string(pose.id - 100000) + ".pgm"),
                            io::grayscale_image(rendered.values[p], rendered.resolution, rendered.resolution));
        }
        if (synthetic) {
            const auto gt = render_scene_maps(state.scene, std::span<const CameraPose>(&pose, 1), config.affinity_render);
            std::vector<std::vector<double>> gt_grids;
            for (const auto& label : rendered.part_labels) {
                for (const auto& m : gt) {
                    if (m.part_label == label) gt_grids.push_back(m.values);
                }
            }
            const auto pred_masks = argmax_regions(rendered.values);
            const auto gt_masks = argmax_regions(gt_grids);
            json per_part = json::array();
            for (std::size_t p = 0; p < pred_masks.size(); ++p) per_part.push_back(mask_iou(pred_masks[p], gt_masks[p]));
            iou.push_back(per_part);
        }
    }
    return json{{"steps", tc.steps},
                {"loss_trace", decimate(fit.loss_trace, 50)},
                {"final_loss", fit.final_loss},
                {"part_labels", state.affinity->part_labels},
                {"eval_iou", iou}};
}

json run_stage4(const PipelineConfig& config, PipelineState& state) {
    if (!state.affinity) throw ValidationError("stage 4 needs a fitted affinity field");
    const auto guidance = make_toy_guidance(config, state);
    std::vector<double> trace;
    trace.reserve(config.modulated_steps);
    for (std::size_t s = 0; s < config.modulated_steps; ++s) {
        const CameraPose pose = sample_training_pose(state.streams->pose, config.sds);
        const auto report =
            modulated_sds_step(state.asset, state.adam, *state.affinity, state.prompt.parts, guidance,
                               config.modulation, config.affinity_render, pose, state.schedule, *state.streams, config.sds);
        trace.push_back(report.residual_rms);
    }
    io::write_asset_checkpoint(config.output_dir / "asset.json", state.asset);
    for (const auto& pose : state.eval_poses) {
        const Tensor img = render_asset_values(state.asset, pose, config.sds);
        const std::size_t res = config.sds.render.resolution;
        io::write_image(config.output_dir / "renders" / ("final_eval" + std::to_string(pose.id - 100000) + ".ppm"),
                        io::rgb_image(img, res, res));
    }
    const auto colors = part_colors(state);
    const auto assignment = measure_color_assignment(state.asset, *state.affinity, colors, state.eval_poses, config.sds,
                                                     config.affinity_render, config.modulation.floor);
    json parts = json::array();
    for (std::size_t p = 0; p < colors.size(); ++p) {
        parts.push_back({{"label", state.prompt.parts[p].label},
                         {"target_color", colors[p]},
                         {"mean_color", assignment.mean_color[p]},
                         {"distances", assignment.distance[p]},
                         {"region_pixels", assignment.region_pixels[p]},
                         {"closer_to_own", static_cast<bool>(assignment.closer_to_own[p])}});
    }
    return json{{"steps", config.modulated_steps},
                {"residual_rms_trace", decimate(trace, 100)},
                {"color_assignment", parts},
                {"all_parts_assigned", assignment.all_assigned()}};
}

json run_pipeline(const PipelineConfig& config) {
    config.validate();
    fs::create_directories(config.output_dir);
    json metrics;
    metrics["config_echo"] = pipeline_config_to_json(config);
    metrics["seeds"] = {{"pipeline", config.seed}, {"toy_guidance", config.seed + 7}, {"eval_poses", config.seed + 0x5EEDull}};
    json clock;
    PipelineState state = init_state(config);

    auto stage = [&](const char* name, auto&& fn) {
        const auto start = std::chrono::steady_clock::now();
        try {
            metrics["stages"][name] = fn(config, state);
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(name, e.what());
        }
        clock[name] = seconds_since(start);
    };
    stage("stage1", run_stage1);
    for (std::size_t k = 0; k < state.partial_views.size(); ++k) {
        const std::size_t res = config.sds.render.resolution;
        io::write_image(config.output_dir / "renders" / ("partial_view" + std::to_string(k) + ".ppm"),
                        io::rgb_image(state.partial_views[k], res, res));
    }
    stage("stage2", run_stage2);
    stage("stage3", run_stage3);
    stage("stage4", run_stage4);
    metrics["wall_clock"] = clock;
    const auto text = metrics.dump(2) + "\n";
    io::write_file(config.output_dir / "metrics.json", io::Bytes(text.begin(), text.end()));
    return metrics;
}

json strip_wall_clock(json metrics) {
    metrics.erase("wall_clock");
    return metrics;
}

}  // namespace partaff
