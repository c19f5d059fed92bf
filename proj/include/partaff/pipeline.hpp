#pragma once

#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "partaff/affinity_field.hpp"
#include "partaff/guidance.hpp"
#include "partaff/scene.hpp"
#include "partaff/sds.hpp"

namespace partaff {

enum class AttentionSource { Synthetic, Files };

/// Everything a four-stage run needs. Mirrors the JSON run config.
struct PipelineConfig {
    std::uint64_t seed = 0;
    std::size_t partial_steps = 1000;
    std::size_t fit_steps = 2000;
    std::size_t modulated_steps = 4000;
    std::size_t extraction_views = 76;
    std::size_t eval_views = 8;
    ExtractionWindow window;
    SdsConfig sds;
    std::size_t asset_hidden = 64;
    std::size_t asset_frequencies = 4;
    AffinityTrainConfig affinity;
    RenderConfig affinity_render;
    ModulationConfig modulation;
    SyntheticAttentionConfig synthetic;
    double toy_score_scale = 0.5;
    double toy_self_mix = 0.25;
    std::size_t toy_embed_dim = 8;
    TimestepWeight timestep_weight = TimestepWeight::Unit;

    AttentionSource attention_source = AttentionSource::Synthetic;
    std::filesystem::path attention_dir;
    std::filesystem::path prompt_path;
    std::filesystem::path output_dir = "pipeline_out";

    void validate() const;
};

/// Parses a run config. Unknown keys anywhere are rejected.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
nlohmann::json pipeline_config_to_json(const PipelineConfig& config);

/// Mutable state threaded through the stages.
struct PipelineState {
    SyntheticScene scene = SyntheticScene::two_part();
    NoiseSchedule schedule = NoiseSchedule::linear();
    AssetField asset;
    AdamState adam;
    std::optional<SdsStreams> streams;
    std::vector<CameraPose> extraction_poses;
    std::vector<CameraPose> eval_poses;
    PromptSpec prompt;
    std::vector<PartAffinityMap> maps;
    std::optional<AffinityField> affinity;
    std::vector<Tensor> partial_views;
};

/// Mean asset colour inside each part's high-affinity region over poses,
/// and whether it is strictly closer to the part's own colour than to any
/// other part's colour.
struct ColorAssignment {
    std::vector<Rgb> mean_color;
    std::vector<std::vector<double>> distance;  ///< [part][colour]
    std::vector<std::size_t> region_pixels;
    std::vector<bool> closer_to_own;

    bool all_assigned() const;
};

ColorAssignment measure_color_assignment(const AssetField& asset, const AffinityField& affinity,
                                         std::span<const Rgb> colors, std::span<const CameraPose> poses,
                                         const SdsConfig& sds, const RenderConfig& affinity_render, double floor);

/// Unseen evaluation poses: stratified azimuths offset by half a stratum
/// from the extraction views' grid.
std::vector<CameraPose> evaluation_poses(const PipelineConfig& config);

PipelineState init_state(const PipelineConfig& config);
nlohmann::json run_stage1(const PipelineConfig& config, PipelineState& state);
nlohmann::json run_stage2(const PipelineConfig& config, PipelineState& state);
nlohmann::json run_stage3(const PipelineConfig& config, PipelineState& state);
nlohmann::json run_stage4(const PipelineConfig& config, PipelineState& state);

/// Toy attention guidance wired to the state's prompt and part colours.
ToyAttentionGuidance make_toy_guidance(const PipelineConfig& config, const PipelineState& state);
std::vector<Rgb> part_colors(const PipelineState& state);

/// Runs all stages, writes artifacts under `config.output_dir` and returns
/// the metrics document (also written to metrics.json). Stage failures are
/// rethrown as StageError tagged with the stage.
nlohmann::json run_pipeline(const PipelineConfig& config);

/// Metrics with the "wall_clock" section removed.
nlohmann::json strip_wall_clock(nlohmann::json metrics);

}  // namespace partaff
