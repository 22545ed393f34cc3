#pragma once

// Run configuration and its flat key=value file format (dotted sections).
// The same serialization is embedded into checkpoints so evaluation always
// sees the architecture it was trained with.

#include <string>

#include "pointmesh/losses.hpp"
#include "pointmesh/model.hpp"
#include "pointmesh/synthgen.hpp"

namespace pointmesh {

struct RunConfig {
    ModelConfig model;
    LossWeights weights;

    double learning_rate = 1e-4;
    double decayed_learning_rate = 1e-5;  // applied from the halfway step on
    int epochs = 5;
    int batch_size = 8;

    int samples = 64;
    uint64_t seed = 1;
    bool occlusion = false;

    std::string output_dir = "out";
    std::string precision = "f64";  // f32 | f64

    SynthConfig synth() const {
        SynthConfig s;
        s.image_size = model.image_size;
        s.heatmap_h = model.feature_h;
        s.heatmap_w = model.feature_w;
        s.occlusion = occlusion;
        return s;
    }

    void validate() const {
        model.validate();
        weights.validate();
        require(learning_rate > 0 && decayed_learning_rate > 0, "config-error",
                "learning rates must be positive");
        require(epochs > 0 && batch_size > 0 && samples > 0, "config-error",
                "epochs, batch_size and samples must be positive");
        require(precision == "f32" || precision == "f64", "config-error",
                "precision must be f32 or f64");
    }
};

/// Parses `key = value` lines ('#' comments, blank lines allowed). Unknown
/// keys fail loudly; omitted keys keep their defaults.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);
std::string serialize_config(const RunConfig& config);

}  // namespace pointmesh
