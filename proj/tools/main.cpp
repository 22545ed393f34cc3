// Command-line front end: train / eval / export / gen-data / ablate.
// Every failure path exits nonzero with a single machine-parsable line:
//   error[<code>]: <message>

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "pointmesh/trainer.hpp"

using namespace pointmesh;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    int64_t seed = -1;
    std::string precision;
};

void add_common(CLI::App* cmd, CommonFlags* flags, bool config_required) {
    auto* opt = cmd->add_option("--config", flags->config_path, "configuration file (key = value)");
    if (config_required) opt->required();
    cmd->add_option("--out", flags->out_dir, "output directory");
    cmd->add_option("--seed", flags->seed, "dataset/init seed override");
    cmd->add_option("--precision", flags->precision, "numeric mode")
        ->check(CLI::IsMember({"f32", "f64"}));
}

RunConfig resolve_config(const CommonFlags& flags) {
    RunConfig cfg = flags.config_path.empty() ? RunConfig{} : load_config_file(flags.config_path);
    if (flags.seed >= 0) cfg.seed = uint64_t(flags.seed);
    if (!flags.out_dir.empty()) cfg.output_dir = flags.out_dir;
    if (!flags.precision.empty()) cfg.precision = flags.precision;
    cfg.validate();
    return cfg;
}

template <typename T>
int do_train(const RunConfig& cfg) {
    TemplateMesh mesh = build_template(TopologyPreset::desk_default());
    auto data = make_dataset(cfg.samples, cfg.seed, mesh, cfg.synth());
    TrainResult result = run_training<T>(cfg, mesh, data, cfg.output_dir);
    std::printf("trained %d steps on %d samples\n", result.steps, int(data.size()));
    std::printf("train-set MPJPE: %.4f -> %.4f mm\n", result.initial_mpjpe, result.final_mpjpe);
    std::printf("final batch loss: %s\n", format_double(result.final_total_loss).c_str());
    std::printf("loss csv: %s\n", result.loss_csv_path.c_str());
    std::printf("checkpoint: %s\n", result.checkpoint_path.c_str());
    return 0;
}

template <typename T>
int do_eval(const std::string& checkpoint_path, const RunConfig& data_cfg,
            const std::string& out_dir, bool oracle) {
    CheckpointInfo info = read_checkpoint_info(checkpoint_path);
    RunConfig cfg = info.config;  // the architecture the weights were trained with
    cfg.samples = data_cfg.samples;
    cfg.seed = data_cfg.seed;
    cfg.occlusion = data_cfg.occlusion;

    TemplateMesh mesh = build_template(TopologyPreset::desk_default());
    auto data = make_dataset(cfg.samples, cfg.seed, mesh, cfg.synth());

    EvalSummary summary;
    if (oracle) {
        summary = evaluate_oracle(data);
    } else {
        MeshRegressor<T> model(cfg.model, mesh, 0);
        load_checkpoint_params(checkpoint_path, model.params());
        summary = evaluate_model(model, data);
    }
    ensure_dir(out_dir);
    std::string csv = out_dir + "/metrics.csv";
    write_metrics_csv(csv, summary);
    std::printf("evaluated %d samples%s\n", int(data.size()), oracle ? " (oracle mode)" : "");
    std::printf("mean MPJPE %.4f  PA-MPJPE %.4f  MPVPE %.4f  F@5 %.4f  F@15 %.4f\n",
                summary.mean.mpjpe, summary.mean.pa_mpjpe, summary.mean.mpvpe,
                summary.mean.f5, summary.mean.f15);
    std::printf("metrics csv: %s\n", csv.c_str());
    return 0;
}

template <typename T>
int do_export(const std::string& checkpoint_path, uint64_t sample_seed,
              const std::string& out_dir) {
    CheckpointInfo info = read_checkpoint_info(checkpoint_path);
    TemplateMesh mesh = build_template(TopologyPreset::desk_default());
    MeshRegressor<T> model(info.config.model, mesh, 0);
    load_checkpoint_params(checkpoint_path, model.params());

    auto sample = make_sample(sample_seed, mesh, info.config.synth());
    auto out = model.forward(Tensor<T>::from_volume(sample.image));

    ensure_dir(out_dir);
    Mat dense(out.dense.dim(0), 3);
    for (size_t i = 0; i < dense.v.size(); ++i) dense.v[i] = double(out.dense.value()[i]);
    write_obj(out_dir + "/mesh.obj", dense, mesh.dense_faces);
    write_ppm(out_dir + "/input.ppm", sample.image);
    const int n = out.heatmaps.dim(0), h = out.heatmaps.dim(1), w = out.heatmaps.dim(2);
    for (int i = 0; i < n; ++i) {
        Mat map(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                map.at(y, x) = double(out.heatmaps.value()[(size_t(i) * h + y) * w + x]);
        char name[64];
        std::snprintf(name, sizeof name, "/heatmap_%03d.pgm", i);
        write_pgm(out_dir + name, map);
    }
    std::printf("wrote %s/mesh.obj (%d vertices), input.ppm and %d heatmap PGMs\n",
                out_dir.c_str(), dense.rows, n);
    return 0;
}

int do_gen_data(const RunConfig& cfg, int count) {
    TemplateMesh mesh = build_template(TopologyPreset::desk_default());
    ensure_dir(cfg.output_dir);
    save_template(mesh, cfg.output_dir + "/template.obj", cfg.output_dir + "/template.aux.txt");
    for (int i = 0; i < count; ++i) {
        auto sample = make_sample(cfg.seed + uint64_t(i), mesh, cfg.synth());
        char dir[64];
        std::snprintf(dir, sizeof dir, "/sample_%05d", i);
        write_sample_dump(cfg.output_dir + dir, sample);
    }
    std::printf("wrote %d samples and the template files under %s\n", count,
                cfg.output_dir.c_str());
    return 0;
}

template <typename T>
int do_ablate(const RunConfig& cfg) {
    TemplateMesh mesh = build_template(TopologyPreset::desk_default());
    auto cells = run_ablation<T>(cfg, mesh, cfg.output_dir);
    write_ablation_csv(cfg.output_dir + "/ablation.csv", cells);
    std::printf("sampling masking final_loss final_mpjpe\n");
    for (const auto& c : cells)
        std::printf("%8s %7s %10.6f %11.4f\n",
                    c.sampling == SamplingMode::PointGuided ? "on" : "off",
                    c.mask == MaskMode::Progressive ? "on" : "off",
                    c.result.final_total_loss, c.result.final_mpjpe);
    std::printf("ablation csv: %s/ablation.csv\n", cfg.output_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"point-guided 3D mesh reconstruction on synthetic figures"};
    app.require_subcommand(1);

    CommonFlags train_flags, eval_flags, export_flags, gen_flags, ablate_flags;
    std::string eval_checkpoint, export_checkpoint;
    int64_t export_seed = 0;
    int gen_count = -1;
    int eval_samples = -1;
    bool eval_oracle = false;

    auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoints");
    add_common(train_cmd, &train_flags, true);

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on synthetic data");
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    add_common(eval_cmd, &eval_flags, false);
    eval_cmd->add_option("--samples", eval_samples, "evaluation sample count");
    eval_cmd->add_flag("--oracle", eval_oracle, "score the ground truth against itself");

    auto* export_cmd = app.add_subcommand("export", "export mesh OBJ and heatmap PGMs");
    export_cmd->add_option("--checkpoint", export_checkpoint, "checkpoint file")->required();
    add_common(export_cmd, &export_flags, false);

    auto* gen_cmd = app.add_subcommand("gen-data", "dump synthetic samples to disk");
    add_common(gen_cmd, &gen_flags, false);
    gen_cmd->add_option("--count", gen_count, "number of samples to dump");

    auto* ablate_cmd = app.add_subcommand("ablate", "run the 2x2 architecture ablation");
    add_common(ablate_cmd, &ablate_flags, true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            RunConfig cfg = resolve_config(train_flags);
            return cfg.precision == "f32" ? do_train<float>(cfg) : do_train<double>(cfg);
        }
        if (eval_cmd->parsed()) {
            RunConfig cfg = resolve_config(eval_flags);
            if (eval_samples > 0) cfg.samples = eval_samples;
            std::string out = eval_flags.out_dir.empty() ? cfg.output_dir : eval_flags.out_dir;
            return cfg.precision == "f32"
                       ? do_eval<float>(eval_checkpoint, cfg, out, eval_oracle)
                       : do_eval<double>(eval_checkpoint, cfg, out, eval_oracle);
        }
        if (export_cmd->parsed()) {
            export_seed = export_flags.seed >= 0 ? export_flags.seed : 0;
            std::string out = export_flags.out_dir.empty() ? "out" : export_flags.out_dir;
            std::string precision = export_flags.precision;
            if (precision.empty())
                precision = read_checkpoint_info(export_checkpoint).precision;
            return precision == "f32"
                       ? do_export<float>(export_checkpoint, uint64_t(export_seed), out)
                       : do_export<double>(export_checkpoint, uint64_t(export_seed), out);
        }
        if (gen_cmd->parsed()) {
            RunConfig cfg = resolve_config(gen_flags);
            return do_gen_data(cfg, gen_count > 0 ? gen_count : cfg.samples);
        }
        if (ablate_cmd->parsed()) {
            RunConfig cfg = resolve_config(ablate_flags);
            return cfg.precision == "f32" ? do_ablate<float>(cfg) : do_ablate<double>(cfg);
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error[%s]: %s\n", e.code().c_str(), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error[unhandled]: %s\n", e.what());
        return 1;
    }
    return 0;
}
