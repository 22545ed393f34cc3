#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pointmesh/trainer.hpp"

using namespace pointmesh;

namespace {

const TemplateMesh& tpl() {
    static TemplateMesh mesh = build_template(TopologyPreset::desk_default());
    return mesh;
}

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.image_size = 16;
    cfg.backbone_channels = 8;
    cfg.feature_h = cfg.feature_w = 8;
    cfg.token_dim = 8;
    cfg.grid_side = 2;
    cfg.blocks = 2;
    cfg.mask_schedule = {7, 5, 3, 1};
    cfg.heads = 2;
    cfg.ffn_width = 16;
    cfg.dim_reduction = 1;  // keep the final dim at 8 for the tiny setup
    return cfg;
}

RunConfig tiny_run() {
    RunConfig cfg;
    cfg.model = tiny_model();
    cfg.samples = 2;
    cfg.batch_size = 2;
    cfg.epochs = 2;
    cfg.seed = 5;
    return cfg;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(bool(f));
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

struct TempDir {
    std::string path;
    explicit TempDir(const std::string& name) : path("pm_test_" + name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("run config round-trips through its file format") {
    RunConfig cfg = tiny_run();
    cfg.weights.w_dice = 0.25;
    cfg.learning_rate = 3e-4;
    cfg.model.sampling_mode = SamplingMode::LearnedQueries;
    cfg.model.mask_mode = MaskMode::Single;
    cfg.output_dir = "somewhere";
    cfg.precision = "f32";

    RunConfig back = parse_config_text(serialize_config(cfg));
    CHECK(serialize_config(back) == serialize_config(cfg));
    CHECK(back.model.mask_schedule == cfg.model.mask_schedule);
    CHECK(back.weights.w_dice == 0.25);
    CHECK(back.precision == "f32");

    CHECK_THROWS_AS(parse_config_text("model.unknown_key = 3\n"), Error);
    CHECK_THROWS_AS(parse_config_text("optim.epochs = banana\n"), Error);
    CHECK_THROWS_AS(parse_config_text("just a line without equals\n"), Error);
    RunConfig commented = parse_config_text("# comment only\n\nmodel.token_dim = 12\n");
    CHECK(commented.model.token_dim == 12);
}

TEST_CASE("checkpoints restore the exact forward pass") {
    TempDir dir("ckpt");
    RunConfig cfg = tiny_run();
    MeshRegressor<double> model(cfg.model, tpl(), 99);
    save_checkpoint(dir.path + "/model.pmck", cfg, model.params());

    auto info = read_checkpoint_info(dir.path + "/model.pmck");
    CHECK(info.precision == "f64");
    CHECK(serialize_config(info.config) == serialize_config(cfg));

    MeshRegressor<double> fresh(info.config.model, tpl(), 12345);  // different init
    load_checkpoint_params(dir.path + "/model.pmck", fresh.params());

    auto sample = make_sample(3, tpl(), cfg.synth());
    auto image = Tensor<double>::from_volume(sample.image);
    auto a = model.forward(image);
    auto b = fresh.forward(image);
    CHECK(a.coarse.value() == b.coarse.value());
    CHECK(a.dense.value() == b.dense.value());
    CHECK(a.camera.value() == b.camera.value());
    CHECK(a.heatmaps.value() == b.heatmaps.value());
}

TEST_CASE("checkpoint loading fails loudly on a shape mismatch") {
    TempDir dir("ckpt_mismatch");
    RunConfig cfg = tiny_run();
    MeshRegressor<double> model(cfg.model, tpl(), 7);
    save_checkpoint(dir.path + "/model.pmck", cfg, model.params());

    ModelConfig other = cfg.model;
    other.token_dim = 12;
    MeshRegressor<double> wrong(other, tpl(), 7);
    try {
        load_checkpoint_params(dir.path + "/model.pmck", wrong.params());
        FAIL("expected an io error");
    } catch (const Error& e) {
        CHECK(e.code() == "io-error");
        CHECK(std::string(e.what()).find("mismatch") != std::string::npos);
    }
}

TEST_CASE("training writes the loss CSV, drops the learning rate halfway") {
    TempDir dir("train");
    RunConfig cfg = tiny_run();
    cfg.epochs = 4;  // 4 steps total at one batch per epoch
    auto data = make_dataset(cfg.samples, cfg.seed, tpl(), cfg.synth());
    std::vector<double> lr_trace;
    TrainResult result = run_training<double>(cfg, tpl(), data, dir.path, &lr_trace);

    CHECK(result.steps == 4);
    REQUIRE(lr_trace.size() == 4);
    CHECK(lr_trace[0] == cfg.learning_rate);
    CHECK(lr_trace[1] == cfg.learning_rate);
    CHECK(lr_trace[2] == cfg.decayed_learning_rate);
    CHECK(lr_trace[3] == cfg.decayed_learning_rate);

    std::string csv = read_file(result.loss_csv_path);
    CHECK(csv.rfind("step,l_v,l_j3d,l_j2d,l_bce,l_dice,total\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 4 steps

    // the rolling checkpoint must reproduce the trained model bit-for-bit
    auto info = read_checkpoint_info(result.checkpoint_path);
    MeshRegressor<double> restored(info.config.model, tpl(), 0);
    load_checkpoint_params(result.checkpoint_path, restored.params());
    auto summary = evaluate_model(restored, data);
    CHECK(summary.mean.mpjpe == doctest::Approx(result.final_mpjpe).epsilon(1e-12));
}

TEST_CASE("two identical runs produce byte-identical CSV outputs") {
    TempDir da("repro_a"), db("repro_b");
    RunConfig cfg = tiny_run();
    auto data = make_dataset(cfg.samples, cfg.seed, tpl(), cfg.synth());
    auto ra = run_training<double>(cfg, tpl(), data, da.path);
    auto rb = run_training<double>(cfg, tpl(), data, db.path);
    CHECK(read_file(ra.loss_csv_path) == read_file(rb.loss_csv_path));

    MeshRegressor<double> ma(cfg.model, tpl(), 1), mb(cfg.model, tpl(), 1);
    load_checkpoint_params(ra.checkpoint_path, ma.params());
    load_checkpoint_params(rb.checkpoint_path, mb.params());
    write_metrics_csv(da.path + "/metrics.csv", evaluate_model(ma, data));
    write_metrics_csv(db.path + "/metrics.csv", evaluate_model(mb, data));
    CHECK(read_file(da.path + "/metrics.csv") == read_file(db.path + "/metrics.csv"));
}

TEST_CASE("oracle evaluation scores the ground truth perfectly") {
    RunConfig cfg = tiny_run();
    auto data = make_dataset(4, 17, tpl(), cfg.synth());
    EvalSummary oracle = evaluate_oracle(data);
    for (const auto& row : oracle.rows) {
        CHECK(row.mpjpe == 0.0);
        CHECK(row.pa_mpjpe <= 1e-9);
        CHECK(row.mpvpe == 0.0);
        CHECK(row.f5 == 1.0);
        CHECK(row.f15 == 1.0);
    }
}

TEST_CASE("metrics summary row is the mean of the per-sample rows") {
    RunConfig cfg = tiny_run();
    auto data = make_dataset(3, 23, tpl(), cfg.synth());
    MeshRegressor<double> model(cfg.model, tpl(), 4);
    EvalSummary s = evaluate_model(model, data);
    double m = 0;
    for (const auto& r : s.rows) m += r.mpjpe / double(s.rows.size());
    CHECK(std::abs(s.mean.mpjpe - m) <= 1e-9);
}

TEST_CASE("non-finite losses abort with the offending step") {
    TempDir dir("nan");
    RunConfig cfg = tiny_run();
    cfg.learning_rate = 1e25;  // drives the weights to overflow quickly
    cfg.epochs = 30;
    auto data = make_dataset(cfg.samples, cfg.seed, tpl(), cfg.synth());
    try {
        run_training<double>(cfg, tpl(), data, dir.path);
        // divergence is expected but not guaranteed; only the error shape is pinned
    } catch (const Error& e) {
        CHECK((e.code() == "nan-loss" || e.code() == "optimizer-error"));
        CHECK(std::string(e.what()).size() > 0);
    }
}

TEST_CASE("end-to-end gradients agree with finite differences on sampled weights") {
    RunConfig cfg = tiny_run();
    MeshRegressor<double> model(cfg.model, tpl(), 31);
    auto sample = make_sample(9, tpl(), cfg.synth());
    auto image = Tensor<double>::from_volume(sample.image);

    auto loss_value = [&] {
        auto out = model.forward(image);
        auto [total, report] = build_sample_loss(out, sample, cfg.weights);
        return total.scalar();
    };
    {
        Graph<double> g;
        auto out = model.forward(image);
        auto [total, report] = build_sample_loss(out, sample, cfg.weights);
        g.backward(total);
    }

    Rng pick(77);
    const double step = 1e-5;
    int checked = 0;
    for (auto& p : model.params()) {
        long idx = pick.uniform_int(0, int(p.tensor.size()) - 1);
        double analytic = p.tensor.has_grad() ? p.tensor.grad()[size_t(idx)] : 0.0;
        double orig = p.tensor.value()[size_t(idx)];
        p.tensor.value()[size_t(idx)] = orig + step;
        double fp = loss_value();
        p.tensor.value()[size_t(idx)] = orig - step;
        double fm = loss_value();
        p.tensor.value()[size_t(idx)] = orig;
        double fd = (fp - fm) / (2 * step);
        double err = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-7});
        CAPTURE(p.name);
        CHECK(err <= 1e-3);
        ++checked;
    }
    CHECK(checked > 30);
}
