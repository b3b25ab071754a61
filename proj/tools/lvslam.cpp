// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <json.hpp>

#include "lvslam/eval.hpp"
#include "lvslam/fixture.hpp"
#include "lvslam/io/ply.hpp"
#include "lvslam/pipeline.hpp"

namespace fs = std::filesystem;
using namespace lvslam;

namespace {

struct RunArgs {
    std::string dataset, config, out;
    unsigned seed = 0;
    bool seed_given = false;
    bool no_dynamic_masking = false, no_hier_losses = false;
};

int cmd_run(const RunArgs& a) {
    PipelineConfig config;
    if (!a.config.empty()) config = load_config(a.config);
    if (a.seed_given) config.seed = a.seed;
    if (a.no_dynamic_masking) config.dynamic_masking = false;
    if (a.no_hier_losses) config.hier_losses = false;

    io::Dataset dataset(a.dataset);
    Pipeline pipeline(dataset.calibration(), config);
    for (int i = 0; i < dataset.frame_count(); ++i) pipeline.process_frame(dataset.load_frame(i));

    fs::create_directories(fs::path(a.out) / "mask");
    io::write_trajectory(pipeline.trajectory(), (fs::path(a.out) / "trajectory.txt").string());
    for (std::size_t i = 0; i < pipeline.refined_masks().size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%06zu.pgm", i);
        io::save_mask((fs::path(a.out) / "mask" / name).string(), pipeline.refined_masks()[i]);
    }
    {
        std::ofstream log((fs::path(a.out) / "loss_log.csv").string(), std::ios::trunc);
        log << "frame,iteration,l_c,l_depth,l_s,l_dino,total\n";
        log.precision(12);
        for (const auto& e : pipeline.loss_log())
            log << e.frame << ',' << e.iteration << ',' << e.report.l_c << ','
                << e.report.l_depth << ',' << e.report.l_s << ',' << e.report.l_dino << ','
                << e.report.total << '\n';
    }
    const auto gaussians = pipeline.export_gaussians();
    io::save_gaussians_ply((fs::path(a.out) / "map.ply").string(), gaussians);
    io::save_gaussians_sidecar((fs::path(a.out) / "map.lvdg").string(), gaussians,
                               dataset.calibration().semantic.num_classes,
                               dataset.calibration().feature.dimension);
    {
        std::ofstream summary((fs::path(a.out) / "run_summary.txt").string(), std::ios::trunc);
        summary << "frames=" << dataset.frame_count() << "\nseed=" << config.seed
                << "\ngaussians=" << gaussians.size()
                << "\nkeyframes=" << pipeline.keyframes().size() << "\n";
        for (const auto& w : pipeline.warnings()) summary << "warning=" << w << "\n";
    }
    for (const auto& w : pipeline.warnings()) std::cerr << "warning: " << w << "\n";
    std::cout << "processed " << dataset.frame_count() << " frames, map holds "
              << gaussians.size() << " gaussians\n";
    return 0;
}

struct EvalArgs {
    std::string traj, gt, renders, gt_images, record, alignment = "rigid";
};

int cmd_eval(const EvalArgs& a) {
    const Trajectory est = io::read_trajectory(a.traj);
    const Trajectory ref = io::read_trajectory(a.gt);
    AteAlignment align = AteAlignment::Rigid;
    if (a.alignment == "none") align = AteAlignment::None;
    else if (a.alignment == "similarity") align = AteAlignment::Similarity;
    else if (a.alignment != "rigid")
        throw ConfigError("--alignment must be none, rigid or similarity");
    const AteResult ate = ate_rmse(est, ref, align);

    nlohmann::json record;
    record["ate_rmse"] = ate.rmse;
    record["frames"] = est.size();
    std::cout << "metric        value\n";
    std::cout << "ate_rmse_m    " << std::fixed << std::setprecision(6) << ate.rmse << "\n";

    if (!a.renders.empty()) {
        if (a.gt_images.empty()) throw ConfigError("--renders requires --gt-images");
        double psnr_sum = 0.0, ssim_sum = 0.0;
        int count = 0;
        for (const auto& entry : fs::directory_iterator(a.renders)) {
            if (entry.path().extension() != ".ppm") continue;
            const fs::path gt_path = fs::path(a.gt_images) / entry.path().filename();
            if (!fs::exists(gt_path)) throw MissingFile("no matching image " + gt_path.string());
            const ImageF rendered = io::load_color_image(entry.path().string());
            const ImageF truth = io::load_color_image(gt_path.string());
            psnr_sum += psnr(rendered, truth);
            ssim_sum += ssim(rendered, truth);
            ++count;
        }
        if (count == 0) throw EmptyInput("no .ppm renders under " + a.renders);
        record["psnr_db"] = psnr_sum / count;
        record["ssim"] = ssim_sum / count;
        record["images"] = count;
        std::cout << "psnr_db       " << psnr_sum / count << "\n";
        std::cout << "ssim          " << ssim_sum / count << "\n";
    }
    if (!a.record.empty()) {
        std::ofstream f(a.record, std::ios::app);
        if (!f) throw IoFailure("cannot open " + a.record + " for writing");
        f << record.dump() << "\n";
    }
    return 0;
}

struct RenderArgs {
    std::string map, sidecar, pose, intrinsics, out, depth_out, semantic_out;
};

int cmd_render(const RenderArgs& a) {
    std::vector<Gaussian> gaussians = io::load_gaussians_ply(a.map);
    int num_classes = 1, feature_dim = 1;
    std::string sidecar = a.sidecar;
    if (sidecar.empty()) sidecar = (fs::path(a.map).replace_extension(".lvdg")).string();
    if (fs::exists(sidecar)) {
        io::load_gaussians_sidecar(sidecar, gaussians, num_classes, feature_dim);
    } else if (!gaussians.empty()) {
        throw MissingFile("sidecar " + sidecar + " not found next to " + a.map);
    }

    std::istringstream ps(a.pose);
    double tx, ty, tz, qx, qy, qz, qw;
    std::string extra;
    if (!(ps >> tx >> ty >> tz >> qx >> qy >> qz >> qw) || (ps >> extra))
        throw ConfigError("--pose must be 'tx ty tz qx qy qz qw'");
    const SE3Pose pose(Eigen::Quaterniond(qw, qx, qy, qz), Vec3(tx, ty, tz));

    const io::Calibration calib = io::load_calibration(a.intrinsics);
    const RenderOutput out =
        render(gaussians, pose, calib.intrinsics, num_classes, feature_dim);
    io::save_color_image(a.out, out.color);
    if (!a.depth_out.empty()) io::save_depth(a.depth_out, out.depth);
    if (!a.semantic_out.empty()) {
        ImageU8 labels(out.semantic_prob.height(), out.semantic_prob.width(), 1);
        for (int r = 0; r < labels.height(); ++r)
            for (int c = 0; c < labels.width(); ++c) {
                int best = 0;
                for (int ch = 1; ch < out.semantic_prob.channels(); ++ch)
                    if (out.semantic_prob.at(r, c, ch) > out.semantic_prob.at(r, c, best))
                        best = ch;
                labels.at(r, c) = static_cast<std::uint8_t>(best);
            }
        io::save_labels(a.semantic_out, labels);
    }
    std::cout << "rendered " << gaussians.size() << " gaussians to " << a.out << "\n";
    return 0;
}

struct ExportArgs {
    std::string map, sidecar, out;
    double min_opacity = 0.0;
};

int cmd_export(const ExportArgs& a) {
    std::vector<Gaussian> gaussians = io::load_gaussians_ply(a.map);
    int num_classes = 1, feature_dim = 1;
    std::string sidecar = a.sidecar;
    if (sidecar.empty()) sidecar = (fs::path(a.map).replace_extension(".lvdg")).string();
    if (fs::exists(sidecar))
        io::load_gaussians_sidecar(sidecar, gaussians, num_classes, feature_dim);
    if (a.min_opacity > 0.0) {
        std::erase_if(gaussians, [&](const Gaussian& g) {
            return sigmoid(g.opacity_logit) < a.min_opacity;
        });
    }
    io::save_gaussians_ply(a.out, gaussians);
    io::save_gaussians_sidecar((fs::path(a.out).replace_extension(".lvdg")).string(), gaussians,
                               num_classes, feature_dim);
    std::cout << "exported " << gaussians.size() << " gaussians to " << a.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LiDAR-visual Gaussian-splatting SLAM toolkit"};
    app.require_subcommand(1);

    RunArgs run_args;
    auto* run_cmd = app.add_subcommand("run", "Process a dataset sequence");
    run_cmd->add_option("--dataset", run_args.dataset, "Dataset root directory")->required();
    run_cmd->add_option("--config", run_args.config, "key=value config file");
    run_cmd->add_option("--out", run_args.out, "Output directory")->required();
    auto* seed_opt = run_cmd->add_option("--seed", run_args.seed, "Run seed");
    run_cmd->add_flag("--no-dynamic-masking", run_args.no_dynamic_masking,
                      "Disable residual-based dynamic masking");
    run_cmd->add_flag("--no-hier-losses", run_args.no_hier_losses,
                      "Disable semantic and feature loss terms");

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trajectory (and optional renders)");
    eval_cmd->add_option("--traj", eval_args.traj, "Estimated trajectory (TUM)")->required();
    eval_cmd->add_option("--gt", eval_args.gt, "Reference trajectory (TUM)")->required();
    eval_cmd->add_option("--renders", eval_args.renders, "Directory of rendered .ppm images");
    eval_cmd->add_option("--gt-images", eval_args.gt_images, "Directory of reference images");
    eval_cmd->add_option("--record", eval_args.record, "Append a JSON record line to this file");
    eval_cmd->add_option("--alignment", eval_args.alignment, "none | rigid | similarity");

    RenderArgs render_args;
    auto* render_cmd = app.add_subcommand("render", "Render a saved map at a pose");
    render_cmd->add_option("--map", render_args.map, "Gaussian map .ply")->required();
    render_cmd->add_option("--sidecar", render_args.sidecar, "Semantic/feature sidecar (.lvdg)");
    render_cmd->add_option("--pose", render_args.pose, "'tx ty tz qx qy qz qw'")->required();
    render_cmd->add_option("--intrinsics", render_args.intrinsics, "calib.txt path")->required();
    render_cmd->add_option("--out", render_args.out, "Output color image (.ppm)")->required();
    render_cmd->add_option("--depth-out", render_args.depth_out, "Optional depth output");
    render_cmd->add_option("--semantic-out", render_args.semantic_out,
                           "Optional semantic label output (.pgm)");

    fixture::FixtureConfig fix_cfg;
    fix_cfg.dynamic = false;
    std::string fix_out;
    auto* fix_cmd = app.add_subcommand("make-fixture", "Generate the synthetic dataset");
    fix_cmd->add_option("--out", fix_out, "Output directory")->required();
    fix_cmd->add_option("--frames", fix_cfg.frames, "Number of frames")
        ->check(CLI::PositiveNumber);
    fix_cmd->add_flag("--dynamic", fix_cfg.dynamic, "Include the moving block");

    ExportArgs export_args;
    auto* export_cmd = app.add_subcommand("export", "Re-export a map, optionally pruned");
    export_cmd->add_option("--map", export_args.map, "Input map .ply")->required();
    export_cmd->add_option("--sidecar", export_args.sidecar, "Input sidecar (.lvdg)");
    export_cmd->add_option("--out", export_args.out, "Output map .ply")->required();
    export_cmd->add_option("--min-opacity", export_args.min_opacity,
                           "Drop gaussians below this opacity");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) {
            run_args.seed_given = seed_opt->count() > 0;
            return cmd_run(run_args);
        }
        if (eval_cmd->parsed()) return cmd_eval(eval_args);
        if (render_cmd->parsed()) return cmd_render(render_args);
        if (fix_cmd->parsed()) {
            fixture::make_fixture(fix_out, fix_cfg);
            std::cout << "wrote " << fix_cfg.frames << " frames to " << fix_out << "\n";
            return 0;
        }
        if (export_cmd->parsed()) return cmd_export(export_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
