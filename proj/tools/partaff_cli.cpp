// partaff: command-line driver for the part-affinity pipeline.
//
// Exit codes: 0 success, 1 usage, 2 validation, 3 stage failure.
// Errors are written to stderr as one JSON object:
//   {"error": {"kind": ..., "message": ..., "stage": ...}}

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include "partaff/affinity_field.hpp"
#include "partaff/error.hpp"
#include "partaff/gradcheck_suite.hpp"
#include "partaff/io.hpp"
#include "partaff/modulation.hpp"
#include "partaff/parallel.hpp"
#include "partaff/pipeline.hpp"
#include "partaff/scene.hpp"
#include "partaff/sds.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace partaff;

namespace {

constexpr int kUsage = 1;
constexpr int kValidation = 2;
constexpr int kStage = 3;

int report_error(const std::string& kind, const std::string& message, const std::string& stage = {}) {
    json e{{"kind", kind}, {"message", message}};
    if (!stage.empty()) e["stage"] = stage;
    std::cerr << json{{"error", e}}.dump() << "\n";
    return stage.empty() ? kValidation : kStage;
}

std::vector<double> parse_csv(const std::string& text, std::size_t expected, const char* what) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ValidationError(std::string(what) + ": '" + item + "' is not a number");
        }
    }
    if (out.size() != expected) {
        throw ValidationError(std::string(what) + ": expected " + std::to_string(expected) + " comma-separated values");
    }
    return out;
}

void write_json(const fs::path& path, const json& j) {
    const auto text = j.dump(2) + "\n";
    io::write_file(path, io::Bytes(text.begin(), text.end()));
}

std::string read_text(const fs::path& path) {
    const auto bytes = io::read_file(path);
    return std::string(bytes.begin(), bytes.end());
}

Tensor scores_from_json(const json& j, std::size_t rows, std::size_t cols, const char* what) {
    const auto v = j.at("values").get<std::vector<double>>();
    if (v.size() != rows * cols) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(rows * cols) + " values");
    }
    return Tensor({rows, cols}, v);
}

// --- aggregate -------------------------------------------------------------

struct AggregateArgs {
    std::string attention, prompt, window = "450,100", out;
    std::vector<std::uint32_t> layers{11};
};

int run_aggregate(const AggregateArgs& a) {
    const auto w = parse_csv(a.window, 2, "--window");
    ExtractionWindow window;
    window.t_start = static_cast<std::uint32_t>(w[0]);
    window.t_end = static_cast<std::uint32_t>(w[1]);
    window.layers = a.layers;
    window.validate();
    const PromptSpec prompt = io::read_prompt(a.prompt);

    std::vector<fs::path> files;
    if (fs::is_directory(a.attention)) {
        for (const auto& e : fs::directory_iterator(a.attention)) {
            if (e.path().extension() == ".pam") files.push_back(e.path());
        }
    } else {
        files.push_back(a.attention);
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ValidationError("no .pam containers found in " + a.attention);

    std::map<std::uint32_t, std::vector<AttentionRecord>> by_camera;
    for (const auto& f : files) {
        for (auto& r : io::read_attention(f)) by_camera[r.camera_id].push_back(std::move(r));
    }
    json written = json::array();
    for (const auto& [camera, records] : by_camera) {
        for (const auto& part : prompt.parts) {
            const auto map = normalize(aggregate(records, window, part));
            const auto path =
                fs::path(a.out) / (io::sanitize_label(part.label) + "_cam" + std::to_string(camera) + ".paf");
            io::write_affinity_map(path, map);
            written.push_back(path.string());
        }
    }
    std::cout << json{{"maps", written}}.dump(2) << "\n";
    return 0;
}

// --- fit-affinity ----------------------------------------------------------

struct FitArgs {
    std::string maps, cameras, out;
    std::size_t steps = 2000;
    std::uint64_t seed = 0;
    std::size_t hidden = 64;
    std::size_t samples = 128;
    double lr = 5e-3;
};

int run_fit(const FitArgs& a) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.maps)) {
        if (e.path().extension() == ".paf") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ValidationError("no .paf maps found in " + a.maps);
    std::vector<PartAffinityMap> maps;
    for (const auto& f : files) maps.push_back(io::read_affinity_map(f));
    const auto poses = io::read_manifest(a.cameras);

    AffinityTrainConfig cfg;
    cfg.steps = a.steps;
    cfg.seed = a.seed;
    cfg.hidden = a.hidden;
    cfg.learning_rate = a.lr;
    cfg.render.samples_per_ray = a.samples;
    const auto fit = fit_affinity(maps, poses, cfg);
    io::write_affinity_checkpoint(a.out, fit.field);
    write_json(fs::path(a.out).string() + ".loss.json",
               json{{"steps", a.steps}, {"final_loss", fit.final_loss}, {"loss_trace", fit.loss_trace}});
    std::cout << json{{"checkpoint", a.out}, {"final_loss", fit.final_loss}}.dump(2) << "\n";
    return 0;
}

// --- render-affinity -------------------------------------------------------

struct RenderArgs {
    std::string ckpt, pose;
    std::vector<std::string> out;
    std::size_t resolution = 64;
    std::size_t samples = 128;
    double fov = kDefaultFov;
    bool heat = false;
};

int run_render(const RenderArgs& a) {
    const auto field = io::read_affinity_checkpoint(a.ckpt);
    const auto p = parse_csv(a.pose, 3, "--pose");
    CameraPose pose;
    pose.azimuth = p[0];
    pose.elevation = p[1];
    pose.radius = p[2];
    pose.fov = a.fov;
    pose.validate();
    if (a.out.size() != field.part_labels.size()) {
        throw ValidationError("--out needs one path per part (" + std::to_string(field.part_labels.size()) + ")");
    }
    RenderConfig rc;
    rc.resolution = a.resolution;
    rc.samples_per_ray = a.samples;
    const auto rendered = render_affinity(field, pose, rc);
    json parts = json::array();
    for (std::size_t k = 0; k < a.out.size(); ++k) {
        const auto& v = rendered.values[k];
        io::write_image(a.out[k], a.heat ? io::heatmap_image(v, rc.resolution, rc.resolution)
                                         : io::grayscale_image(v, rc.resolution, rc.resolution));
        parts.push_back({{"label", field.part_labels[k]}, {"path", a.out[k]}});
    }
    std::cout << json{{"parts", parts}}.dump(2) << "\n";
    return 0;
}

// --- modulate-demo ---------------------------------------------------------

// Scores file: {"height": h, "width": w,
//               "cross": {"tokens": n, "values": [h*w*n]},
//               "self": {"values": [(h*w)^2]},            (optional)
//               "parts": [{"label": ..., "indices": [...]}]}
// Affinity files are PAF1 maps in the order of "parts".
struct ModulateArgs {
    std::string scores, out;
    std::vector<std::string> affinity;
    double alpha_cross = 0.8;
    double alpha_self = 0.9;
    double floor = 1e-4;
};

json tensor_json(const Tensor& t) { return t.to_vector(); }

int run_modulate(const ModulateArgs& a) {
    const json doc = json::parse(read_text(a.scores));
    const std::size_t h = doc.at("height").get<std::size_t>();
    const std::size_t w = doc.at("width").get<std::size_t>();
    std::vector<PartSpec> parts;
    for (const auto& p : doc.at("parts")) {
        parts.push_back({p.at("label").get<std::string>(), p.at("indices").get<std::vector<std::size_t>>()});
    }
    if (a.affinity.size() != parts.size()) throw ValidationError("--affinity needs one map per part");
    std::vector<std::vector<double>> m;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto map = io::read_affinity_map(a.affinity[k]);
        if (map.part_label != parts[k].label) {
            throw ValidationError("affinity map " + a.affinity[k] + " is for '" + map.part_label + "', expected '" +
                                  parts[k].label + "'");
        }
        m.push_back(resample_affinity(map.values, map.height, map.width, h * w, h, w, a.floor));
    }
    json result{{"height", h}, {"width", w}, {"alpha_cross", a.alpha_cross}, {"alpha_self", a.alpha_self}};
    if (doc.contains("cross")) {
        const std::size_t n = doc.at("cross").at("tokens").get<std::size_t>();
        for (const auto& p : parts) p.validate(n);
        const auto mod = modulate_cross(scores_from_json(doc.at("cross"), h * w, n, "cross"), m, parts, a.alpha_cross);
        result["cross"] = {{"tokens", n}, {"scores", tensor_json(mod.scores)}, {"attention", tensor_json(mod.attention)}};
    }
    if (doc.contains("self")) {
        const auto mod = modulate_self(scores_from_json(doc.at("self"), h * w, h * w, "self"), m, a.alpha_self);
        result["self"] = {{"scores", tensor_json(mod.scores)}, {"attention", tensor_json(mod.attention)}};
    }
    write_json(a.out, result);
    return 0;
}

// --- pipeline --------------------------------------------------------------

int run_pipeline_cmd(const std::string& config_path, const std::string& out_override) {
    PipelineConfig cfg = pipeline_config_from_json(json::parse(read_text(config_path)));
    if (!out_override.empty()) cfg.output_dir = out_override;
    const auto metrics = run_pipeline(cfg);
    std::cout << json{{"output_dir", cfg.output_dir.string()},
                      {"all_parts_assigned", metrics["stages"]["stage4"]["all_parts_assigned"]}}
                     .dump(2)
              << "\n";
    return 0;
}

// --- gradcheck -------------------------------------------------------------

int run_gradcheck_cmd(std::uint64_t seed, double tolerance) {
    GradCheckOptions opt;
    opt.tolerance = tolerance;
    const auto cases = run_gradcheck_suite(seed, opt);
    bool ok = true;
    json rows = json::array();
    for (const auto& c : cases) {
        ok = ok && c.report.passed;
        rows.push_back({{"name", c.name},
                        {"max_rel_error", c.report.max_rel_error},
                        {"checked", c.report.checked},
                        {"skipped_kinks", c.report.skipped_kinks},
                        {"passed", c.report.passed}});
    }
    std::cout << json{{"tolerance", tolerance}, {"cases", rows}, {"passed", ok}}.dump(2) << "\n";
    return ok ? 0 : kStage;
}

// --- bench -----------------------------------------------------------------

template <class F>
double time_per_call(std::size_t reps, F&& f) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < reps; ++i) f();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() /
           static_cast<double>(reps);
}

int run_bench(const std::string& stage, std::size_t reps, std::uint64_t seed, std::size_t hidden) {
    const auto scene = SyntheticScene::two_part();
    const auto prompt = synthetic_prompt(scene);
    const auto poses = sample_sphere_poses(8, kDefaultRadius, {}, seed);
    json out{{"stage", stage}, {"repetitions", reps}, {"threads", max_threads()}};
    if (stage == "aggregate") {
        ExtractionWindow window;
        SyntheticAttentionConfig sc;
        sc.seed = seed;
        const auto records = synthetic_attention(scene, poses[0], prompt, window, sc);
        out["records_per_view"] = records.size();
        out["seconds_per_view"] = time_per_call(reps, [&] {
            for (const auto& part : prompt.parts) (void)normalize(aggregate(records, window, part));
        });
    } else if (stage == "fit") {
        RenderConfig rc;
        rc.resolution = 32;
        auto maps = render_scene_maps(scene, poses, rc);
        AffinityTrainConfig cfg;
        cfg.steps = reps;
        cfg.seed = seed;
        cfg.hidden = hidden;
        out["hidden"] = hidden;
        const double total = time_per_call(1, [&] { (void)fit_affinity(maps, poses, cfg); });
        out["seconds_per_step"] = total / static_cast<double>(reps);
        out["rays_per_step"] = cfg.rays_per_batch;
        out["samples_per_ray"] = cfg.render.samples_per_ray;
    } else if (stage == "render") {
        const auto field = AffinityField::init({"head", "body"}, hidden, 6, seed);
        out["hidden"] = hidden;
        RenderConfig rc;
        out["resolution"] = rc.resolution;
        out["seconds_per_view"] = time_per_call(reps, [&] { (void)render_affinity(field, poses[0], rc); });
    } else if (stage == "sds-step") {
        auto asset = AssetField::init(64, 4, seed);
        SdsConfig sc;
        AdamState adam(sc.learning_rate);
        NoiseSchedule schedule = NoiseSchedule::linear();
        auto streams = SdsStreams::from_seed(seed);
        const SyntheticOracleGuidance guidance([&](const CameraPose& p, std::size_t res) {
            RenderConfig rc = sc.render;
            rc.resolution = res;
            return render_scene_rgb(scene, p, rc, true, sc.background);
        });
        out["resolution"] = sc.render.resolution;
        out["seconds_per_step"] = time_per_call(reps, [&] {
            (void)sds_step(asset, adam, sample_training_pose(streams.pose, sc), guidance, schedule, streams, sc);
        });
    } else {
        throw ValidationError("unknown bench stage '" + stage + "'");
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Part-affinity attention modulation for score-distillation 3D generation"};
    app.require_subcommand(1);
    std::size_t threads = 1;
    app.add_option("--threads", threads, "Worker thread cap")->check(CLI::PositiveNumber);

    AggregateArgs agg;
    auto* c_agg = app.add_subcommand("aggregate", "Average attention records into part affinity maps");
    c_agg->add_option("--attention", agg.attention, "PAM1 file or directory of .pam files")->required();
    c_agg->add_option("--prompt", agg.prompt, "Prompt spec JSON")->required();
    c_agg->add_option("--window", agg.window, "t_start,t_end");
    c_agg->add_option("--layers", agg.layers, "Layers to keep");
    c_agg->add_option("--out", agg.out, "Output directory")->required();

    FitArgs fit;
    auto* c_fit = app.add_subcommand("fit-affinity", "Fit a 3D affinity field to per-view maps");
    c_fit->add_option("--maps", fit.maps, "Directory of .paf maps")->required();
    c_fit->add_option("--cameras", fit.cameras, "Camera manifest JSON")->required();
    c_fit->add_option("--steps", fit.steps, "Optimisation steps")->check(CLI::PositiveNumber);
    c_fit->add_option("--seed", fit.seed);
    c_fit->add_option("--hidden", fit.hidden, "Hidden width")->check(CLI::PositiveNumber);
    c_fit->add_option("--samples", fit.samples, "Samples per ray")->check(CLI::PositiveNumber);
    c_fit->add_option("--lr", fit.lr, "Adam learning rate");
    c_fit->add_option("--out", fit.out, "Checkpoint path")->required();

    RenderArgs ren;
    auto* c_ren = app.add_subcommand("render-affinity", "Render per-part heatmaps from a checkpoint");
    c_ren->add_option("--ckpt", ren.ckpt, "Affinity checkpoint")->required();
    c_ren->add_option("--pose", ren.pose, "azimuth,elevation,radius (degrees, units)")->required();
    c_ren->add_option("--out", ren.out, "One PGM/PPM path per part")->required();
    c_ren->add_option("--resolution", ren.resolution)->check(CLI::PositiveNumber);
    c_ren->add_option("--samples", ren.samples)->check(CLI::PositiveNumber);
    c_ren->add_option("--fov", ren.fov);
    c_ren->add_flag("--heat", ren.heat, "Colour heatmaps (PPM) instead of grayscale");

    ModulateArgs mod;
    auto* c_mod = app.add_subcommand("modulate-demo", "Apply affinity modulation to score matrices");
    c_mod->add_option("--scores", mod.scores, "Scores JSON")->required();
    c_mod->add_option("--affinity", mod.affinity, "PAF1 map per part")->required();
    c_mod->add_option("--alpha-cross", mod.alpha_cross);
    c_mod->add_option("--alpha-self", mod.alpha_self);
    c_mod->add_option("--floor", mod.floor);
    c_mod->add_option("--out", mod.out, "Output JSON")->required();

    std::string config_path, out_override;
    auto* c_pipe = app.add_subcommand("pipeline", "Run the four-stage pipeline");
    c_pipe->add_option("--config", config_path, "Run config JSON")->required();
    c_pipe->add_option("--out", out_override, "Override output_dir");

    std::uint64_t gc_seed = 0;
    double gc_tol = 1e-6;
    auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    c_gc->add_option("--seed", gc_seed);
    c_gc->add_option("--tolerance", gc_tol);

    std::string bench_stage;
    std::size_t bench_reps = 5;
    std::uint64_t bench_seed = 0;
    std::size_t bench_hidden = 64;
    auto* c_bench = app.add_subcommand("bench", "Per-operation timings");
    c_bench->add_option("--stage", bench_stage)->required()->check(CLI::IsMember({"aggregate", "fit", "render", "sds-step"}));
    c_bench->add_option("--reps", bench_reps)->check(CLI::PositiveNumber);
    c_bench->add_option("--seed", bench_seed);
    c_bench->add_option("--hidden", bench_hidden, "Affinity field hidden width")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump() << "\n";
        return kUsage;
    }

    try {
        retain_freed_memory();
        set_max_threads(threads);
        if (*c_agg) return run_aggregate(agg);
        if (*c_fit) return run_fit(fit);
        if (*c_ren) return run_render(ren);
        if (*c_mod) return run_modulate(mod);
        if (*c_pipe) return run_pipeline_cmd(config_path, out_override);
        if (*c_gc) return run_gradcheck_cmd(gc_seed, gc_tol);
        if (*c_bench) return run_bench(bench_stage, bench_reps, bench_seed, bench_hidden);
    } catch (const StageError& e) {
        return report_error(e.kind(), e.what(), e.stage());
    } catch (const Error& e) {
        return report_error(e.kind(), e.what());
    } catch (const json::exception& e) {
        return report_error("validation", e.what());
    } catch (const std::exception& e) {
        return report_error("io", e.what());
    }
    return kUsage;
}
