#pragma once

// Training, evaluation and ablation drivers. The CLI and the acceptance
// suite drive the same code paths: Adam with the halfway learning-rate drop,
// a loss CSV row per step, a checkpoint per epoch, and metric reports in
// millimetres (world units are metres; reports scale by 1000).

#include <cmath>
#include <fstream>
#include <vector>

#include "pointmesh/checkpoint.hpp"
#include "pointmesh/io.hpp"
#include "pointmesh/losses.hpp"
#include "pointmesh/metrics.hpp"
#include "pointmesh/model.hpp"
#include "pointmesh/runconfig.hpp"
#include "pointmesh/synthgen.hpp"

namespace pointmesh {

constexpr double kUnitsToMillimetres = 1000.0;

/// Composes the five loss terms for one sample.
template <typename T>
std::pair<Tensor<T>, LossReport> build_sample_loss(const ModelOutput<T>& out,
                                                   const SyntheticSample& sample,
                                                   const LossWeights& weights) {
    auto l_v = add(vertex_loss(out.coarse, sample.gt_coarse),
                   vertex_loss(out.dense, sample.gt_dense));
    auto l_j3d = joint3d_loss(out.joints, out.joints_regressed, sample.gt_joints3d);
    auto j2 = project_2d(out.joints, out.camera);
    auto j2r = project_2d(out.joints_regressed, out.camera);
    auto l_j2d = joint2d_loss(j2, j2r, sample.gt_joints2d);
    auto l_bce = heatmap_bce(out.heatmaps, sample.gt_heatmaps);
    auto l_dice = heatmap_dice(out.heatmaps, sample.gt_heatmaps);
    return total_loss(l_v, l_j3d, l_j2d, l_bce, l_dice, weights);
}

struct EvalRow {
    int sample_id = 0;
    double mpjpe = 0, pa_mpjpe = 0, mpvpe = 0, f5 = 0, f15 = 0;
};

struct EvalSummary {
    std::vector<EvalRow> rows;
    EvalRow mean;
};

namespace detail {

template <typename T>
Mat to_mat(const Tensor<T>& t, double scale = 1.0) {
    Mat m(t.dim(0), t.dim(1));
    for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = double(t.value()[i]) * scale;
    return m;
}

}  // namespace detail

/// Per-sample MPJPE / PA-MPJPE / MPVPE / F@5mm / F@15mm plus the mean row.
/// Joints are the mesh-regressed ones; F-scores use Procrustes-aligned
/// dense vertices.
template <typename T>
EvalSummary evaluate_model(const MeshRegressor<T>& model,
                           const std::vector<SyntheticSample>& data) {
    EvalSummary summary;
    for (size_t i = 0; i < data.size(); ++i) {
        const auto& sample = data[i];
        auto out = model.forward(Tensor<T>::from_volume(sample.image));
        Mat pred_j = detail::to_mat(out.joints_regressed, kUnitsToMillimetres);
        Mat pred_v = detail::to_mat(out.dense, kUnitsToMillimetres);
        Mat gt_j(sample.gt_joints3d);
        Mat gt_v(sample.gt_dense);
        for (auto& v : gt_j.v) v *= kUnitsToMillimetres;
        for (auto& v : gt_v.v) v *= kUnitsToMillimetres;

        EvalRow row;
        row.sample_id = int(i);
        row.mpjpe = mpjpe(pred_j, gt_j);
        row.pa_mpjpe = pa_mpjpe(pred_j, gt_j);
        row.mpvpe = mpvpe(pred_v, gt_v);
        auto [transform, aligned] = procrustes_align(pred_v, gt_v);
        row.f5 = f_score(aligned, gt_v, 5.0);
        row.f15 = f_score(aligned, gt_v, 15.0);
        summary.rows.push_back(row);
    }
    const double n = double(summary.rows.size());
    for (const auto& r : summary.rows) {
        summary.mean.mpjpe += r.mpjpe / n;
        summary.mean.pa_mpjpe += r.pa_mpjpe / n;
        summary.mean.mpvpe += r.mpvpe / n;
        summary.mean.f5 += r.f5 / n;
        summary.mean.f15 += r.f15 / n;
    }
    return summary;
}

/// Oracle mode: scores the ground truth against itself. Errors must come
/// out exactly zero and F-scores exactly one; anything else means the
/// metric plumbing is broken.
inline EvalSummary evaluate_oracle(const std::vector<SyntheticSample>& data) {
    EvalSummary summary;
    for (size_t i = 0; i < data.size(); ++i) {
        Mat j(data[i].gt_joints3d), v(data[i].gt_dense);
        for (auto& x : j.v) x *= kUnitsToMillimetres;
        for (auto& x : v.v) x *= kUnitsToMillimetres;
        EvalRow row;
        row.sample_id = int(i);
        row.mpjpe = mpjpe(j, j);
        row.pa_mpjpe = pa_mpjpe(j, j);
        row.mpvpe = mpvpe(v, v);
        auto [transform, aligned] = procrustes_align(v, v);
        row.f5 = f_score(aligned, v, 5.0);
        row.f15 = f_score(aligned, v, 15.0);
        summary.rows.push_back(row);
    }
    const double n = double(summary.rows.size());
    for (const auto& r : summary.rows) {
        summary.mean.mpjpe += r.mpjpe / n;
        summary.mean.pa_mpjpe += r.pa_mpjpe / n;
        summary.mean.mpvpe += r.mpvpe / n;
        summary.mean.f5 += r.f5 / n;
        summary.mean.f15 += r.f15 / n;
    }
    return summary;
}

inline void write_metrics_csv(const std::string& path, const EvalSummary& summary) {
    std::ofstream f(path);
    require(bool(f), "io-error", "cannot write " + path);
    f << "sample_id,mpjpe,pa_mpjpe,mpvpe,f5,f15\n";
    auto row = [&](const std::string& id, const EvalRow& r) {
        f << id << "," << format_double(r.mpjpe) << "," << format_double(r.pa_mpjpe) << ","
          << format_double(r.mpvpe) << "," << format_double(r.f5) << ","
          << format_double(r.f15) << "\n";
    };
    for (const auto& r : summary.rows) row(std::to_string(r.sample_id), r);
    row("mean", summary.mean);
    require(bool(f), "io-error", "short write on " + path);
}

struct TrainResult {
    int steps = 0;
    double initial_mpjpe = 0;  // training-set mean before the first step, mm
    double final_mpjpe = 0;    // training-set mean after the last step, mm
    double final_total_loss = 0;  // batch-mean total of the last step
    std::string checkpoint_path;
    std::string loss_csv_path;
};

template <typename T>
TrainResult run_training(const RunConfig& cfg, const TemplateMesh& mesh,
                         const std::vector<SyntheticSample>& data,
                         const std::string& out_dir,
                         std::vector<double>* lr_trace = nullptr) {
    cfg.validate();
    require(!data.empty(), "config-error", "training needs at least one sample");
    ensure_dir(out_dir);

    MeshRegressor<T> model(cfg.model, mesh, cfg.seed + 0x9e3779b97f4a7c15ull);
    AdamOptimizer<T> opt(&model.params(), cfg.learning_rate);

    const int batches_per_epoch = (int(data.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const int total_steps = cfg.epochs * batches_per_epoch;

    TrainResult result;
    result.loss_csv_path = out_dir + "/loss.csv";
    result.checkpoint_path = out_dir + "/checkpoint.pmck";
    std::ofstream loss_csv(result.loss_csv_path);
    require(bool(loss_csv), "io-error", "cannot write " + result.loss_csv_path);
    loss_csv << "step,l_v,l_j3d,l_j2d,l_bce,l_dice,total\n";

    result.initial_mpjpe = evaluate_model(model, data).mean.mpjpe;

    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order(data.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
        Rng shuffle_rng(cfg.seed * 1000003ull + uint64_t(epoch));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[size_t(shuffle_rng.uniform_int(0, int(i) - 1))]);

        for (int b = 0; b < batches_per_epoch; ++b) {
            const int begin = b * cfg.batch_size;
            const int end = std::min<int>(begin + cfg.batch_size, int(data.size()));
            const double inv_batch = 1.0 / double(end - begin);

            opt.zero_grad();
            LossReport batch_mean;
            for (int s = begin; s < end; ++s) {
                const auto& sample = data[size_t(order[size_t(s)])];
                Graph<T> graph;
                auto out = model.forward(Tensor<T>::from_volume(sample.image));
                auto [total, report] = build_sample_loss(out, sample, cfg.weights);
                require(std::isfinite(report.total), "nan-loss",
                        "non-finite loss at step " + std::to_string(step));
                graph.backward(scale(total, inv_batch));
                batch_mean.l_v += report.l_v * inv_batch;
                batch_mean.l_j3d += report.l_j3d * inv_batch;
                batch_mean.l_j2d += report.l_j2d * inv_batch;
                batch_mean.l_bce += report.l_bce * inv_batch;
                batch_mean.l_dice += report.l_dice * inv_batch;
                batch_mean.total += report.total * inv_batch;
            }
            opt.set_learning_rate(step < total_steps / 2.0 ? cfg.learning_rate
                                                           : cfg.decayed_learning_rate);
            if (lr_trace) lr_trace->push_back(opt.learning_rate());
            opt.step();

            loss_csv << step << "," << format_double(batch_mean.l_v) << ","
                     << format_double(batch_mean.l_j3d) << ","
                     << format_double(batch_mean.l_j2d) << ","
                     << format_double(batch_mean.l_bce) << ","
                     << format_double(batch_mean.l_dice) << ","
                     << format_double(batch_mean.total) << "\n";
            result.final_total_loss = batch_mean.total;
            ++step;
        }
        save_checkpoint(result.checkpoint_path, cfg, model.params());
    }
    loss_csv.flush();
    require(bool(loss_csv), "io-error", "short write on " + result.loss_csv_path);

    result.steps = step;
    result.final_mpjpe = evaluate_model(model, data).mean.mpjpe;
    return result;
}

struct AblationCell {
    SamplingMode sampling;
    MaskMode mask;
    TrainResult result;
};

/// Table of the four architecture toggles on one fixed synthetic set:
/// (sampling off/on) x (progressive masking off/on), identical budgets.
template <typename T>
std::vector<AblationCell> run_ablation(const RunConfig& base, const TemplateMesh& mesh,
                                       const std::string& out_dir) {
    std::vector<SyntheticSample> data =
        make_dataset(base.samples, base.seed, mesh, base.synth());
    const std::pair<SamplingMode, MaskMode> cells[4] = {
        {SamplingMode::LearnedQueries, MaskMode::None},
        {SamplingMode::LearnedQueries, MaskMode::Progressive},
        {SamplingMode::PointGuided, MaskMode::None},
        {SamplingMode::PointGuided, MaskMode::Progressive},
    };
    std::vector<AblationCell> out;
    for (int i = 0; i < 4; ++i) {
        RunConfig cfg = base;
        cfg.model.sampling_mode = cells[i].first;
        cfg.model.mask_mode = cells[i].second;
        AblationCell cell{cells[i].first, cells[i].second,
                          run_training<T>(cfg, mesh, data, out_dir + "/cell" + std::to_string(i))};
        out.push_back(std::move(cell));
    }
    return out;
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblationCell>& cells) {
    std::ofstream f(path);
    require(bool(f), "io-error", "cannot write " + path);
    f << "point_guided_sampling,progressive_masking,final_total_loss,final_mpjpe\n";
    for (const auto& c : cells) {
        f << (c.sampling == SamplingMode::PointGuided ? "yes" : "no") << ","
          << (c.mask == MaskMode::Progressive ? "yes" : "no") << ","
          << format_double(c.result.final_total_loss) << ","
          << format_double(c.result.final_mpjpe) << "\n";
    }
    require(bool(f), "io-error", "short write on " + path);
}

}  // namespace pointmesh
