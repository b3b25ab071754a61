// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "lvslam/dynamic_mask.hpp"
#include "lvslam/losses.hpp"
#include "lvslam/optim.hpp"

namespace lvslam {

/// Run configuration. Every field can be overridden from a line-oriented
/// key=value config file; see config_keys() for the schema.
struct PipelineConfig {
    LossWeights weights;
    UncertaintyWeights uncertainty;
    MaskingParams masking;

    int tracking_iterations = 30;
    double tracking_min_alpha = 0.5;  // pixels the map cannot explain are excluded
    int mapping_iterations = 100;
    int keyframe_interval = 5;
    double keyframe_translation = 2.0;  // meters
    int recent_keyframes = 5;

    double submap_extent = 50.0;
    double gaussian_init_scale = 1.0;  // k_s in the depth/fx footprint heuristic
    int gaussian_init_stride = 1;
    double opacity_min = 0.05;
    int prune_every = 50;

    double voxel_size = 1.0;
    int max_points_per_voxel = 20;
    double map_range = 100.0;
    int icp_max_iterations = 100;
    double icp_initial_threshold = 2.0;
    double icp_min_motion = 0.1;
    double lidar_max_range = 100.0;

    StepSizes steps;
    unsigned seed = 0;

    bool dynamic_masking = true;  // residual-driven mask refinement
    bool hier_losses = true;      // semantic + feature loss terms
};

namespace config_detail {

using Setter = std::function<void(PipelineConfig&, const std::string&)>;

inline double to_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + value + "' is not a number");
    }
}

inline const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        auto num = [&](const std::string& key, auto member) {
            t[key] = [key, member](PipelineConfig& c, const std::string& v) {
                c.*member = static_cast<std::remove_reference_t<decltype(c.*member)>>(
                    to_double(key, v));
            };
        };
        auto nested = [&](const std::string& key, auto outer, auto inner) {
            t[key] = [key, outer, inner](PipelineConfig& c, const std::string& v) {
                (c.*outer).*inner = static_cast<std::remove_reference_t<decltype((c.*outer).*inner)>>(
                    to_double(key, v));
            };
        };
        nested("lambda_s", &PipelineConfig::weights, &LossWeights::lambda_s);
        nested("lambda_dino", &PipelineConfig::weights, &LossWeights::lambda_dino);
        nested("lambda_c", &PipelineConfig::weights, &LossWeights::lambda_c);
        nested("lambda_depth", &PipelineConfig::weights, &LossWeights::lambda_depth);
        nested("residual_lambda_dino", &PipelineConfig::uncertainty,
               &UncertaintyWeights::lambda_dino);
        nested("residual_lambda_depth", &PipelineConfig::uncertainty,
               &UncertaintyWeights::lambda_depth);
        nested("sigma_min", &PipelineConfig::masking, &MaskingParams::sigma_min);
        nested("sigma_max", &PipelineConfig::masking, &MaskingParams::sigma_max);
        nested("sigma_steps", &PipelineConfig::masking, &MaskingParams::sigma_steps);
        nested("kappa", &PipelineConfig::masking, &MaskingParams::kappa);
        nested("morph_open_radius", &PipelineConfig::masking, &MaskingParams::morph_open_radius);
        num("tracking_iterations", &PipelineConfig::tracking_iterations);
        num("tracking_min_alpha", &PipelineConfig::tracking_min_alpha);
        num("mapping_iterations", &PipelineConfig::mapping_iterations);
        num("keyframe_interval", &PipelineConfig::keyframe_interval);
        num("keyframe_translation", &PipelineConfig::keyframe_translation);
        num("recent_keyframes", &PipelineConfig::recent_keyframes);
        num("submap_extent", &PipelineConfig::submap_extent);
        num("gaussian_init_scale", &PipelineConfig::gaussian_init_scale);
        num("gaussian_init_stride", &PipelineConfig::gaussian_init_stride);
        num("opacity_min", &PipelineConfig::opacity_min);
        num("prune_every", &PipelineConfig::prune_every);
        num("voxel_size", &PipelineConfig::voxel_size);
        num("max_points_per_voxel", &PipelineConfig::max_points_per_voxel);
        num("map_range", &PipelineConfig::map_range);
        num("icp_max_iterations", &PipelineConfig::icp_max_iterations);
        num("icp_initial_threshold", &PipelineConfig::icp_initial_threshold);
        num("icp_min_motion", &PipelineConfig::icp_min_motion);
        num("lidar_max_range", &PipelineConfig::lidar_max_range);
        nested("step_position", &PipelineConfig::steps, &StepSizes::position);
        nested("step_log_scale", &PipelineConfig::steps, &StepSizes::log_scale);
        nested("step_rotation", &PipelineConfig::steps, &StepSizes::rotation);
        nested("step_opacity", &PipelineConfig::steps, &StepSizes::opacity);
        nested("step_color", &PipelineConfig::steps, &StepSizes::color);
        nested("step_semantic", &PipelineConfig::steps, &StepSizes::semantic);
        nested("step_feature", &PipelineConfig::steps, &StepSizes::feature);
        nested("step_pose", &PipelineConfig::steps, &StepSizes::pose);
        num("seed", &PipelineConfig::seed);
        num("dynamic_masking", &PipelineConfig::dynamic_masking);
        num("hier_losses", &PipelineConfig::hier_losses);
        return t;
    }();
    return table;
}

}  // namespace config_detail

inline void apply_config_line(PipelineConfig& config, const std::string& key,
                              const std::string& value) {
    const auto& table = config_detail::setters();
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(config, value);
}

inline PipelineConfig load_config(const std::string& path, PipelineConfig base = {}) {
    std::ifstream f(path);
    if (!f) throw MissingFile("cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto x = s.find_first_not_of(" \t");
            const auto y = s.find_last_not_of(" \t\r");
            return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
        };
        apply_config_line(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    if (base.tracking_iterations < 1 || base.mapping_iterations < 0 ||
        base.keyframe_interval < 1)
        throw ConfigError(path + ": iteration counts must be positive");
    return base;
}

}  // namespace lvslam
