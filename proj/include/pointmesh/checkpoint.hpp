#pragma once

// Checkpoint container: a text header with the full run configuration and
// the named tensor table, followed by a raw little-endian payload in the
// declared order. Loading verifies every name and shape and fails loudly on
// any mismatch, so a checkpoint can never silently drive the wrong
// architecture.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pointmesh/adam.hpp"
#include "pointmesh/runconfig.hpp"

namespace pointmesh {

template <typename T>
void save_checkpoint(const std::string& path, const RunConfig& config,
                     const ParamSet<T>& params) {
    std::ofstream f(path, std::ios::binary);
    require(bool(f), "io-error", "cannot write checkpoint " + path);
    f << "pointmesh-checkpoint v1\n";
    f << "precision " << (sizeof(T) == 4 ? "f32" : "f64") << "\n";
    f << "config-begin\n" << serialize_config(config) << "config-end\n";
    f << "tensors " << params.size() << "\n";
    for (const auto& p : params) {
        f << p.name << " " << p.tensor.ndim();
        for (int d = 0; d < p.tensor.ndim(); ++d) f << " " << p.tensor.dim(d);
        f << "\n";
    }
    f << "data\n";
    for (const auto& p : params)
        f.write(reinterpret_cast<const char*>(p.tensor.value().data()),
                std::streamsize(p.tensor.value().size() * sizeof(T)));
    require(bool(f), "io-error", "short write on checkpoint " + path);
}

struct CheckpointInfo {
    RunConfig config;
    std::string precision;
    std::vector<std::pair<std::string, Shape>> tensors;
    std::streampos payload_start;
};

inline CheckpointInfo read_checkpoint_info(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(bool(f), "io-error", "cannot read checkpoint " + path);
    std::string line;
    std::getline(f, line);
    require(line == "pointmesh-checkpoint v1", "io-error",
            path + " is not a pointmesh checkpoint");
    CheckpointInfo info;
    std::getline(f, line);
    require(line.rfind("precision ", 0) == 0, "io-error", "checkpoint missing precision");
    info.precision = line.substr(10);
    require(info.precision == "f32" || info.precision == "f64", "io-error",
            "unknown checkpoint precision " + info.precision);
    std::getline(f, line);
    require(line == "config-begin", "io-error", "checkpoint missing config block");
    std::ostringstream cfg_text;
    while (std::getline(f, line) && line != "config-end") cfg_text << line << "\n";
    require(line == "config-end", "io-error", "checkpoint config block unterminated");
    info.config = parse_config_text(cfg_text.str());

    std::getline(f, line);
    std::istringstream hdr(line);
    std::string tag;
    size_t count = 0;
    hdr >> tag >> count;
    require(tag == "tensors", "io-error", "checkpoint missing tensor table");
    for (size_t i = 0; i < count; ++i) {
        std::getline(f, line);
        std::istringstream ls(line);
        std::string name;
        int ndim = 0;
        ls >> name >> ndim;
        require(bool(ls) && ndim >= 1, "io-error", "bad tensor table line: " + line);
        Shape shape(static_cast<size_t>(ndim));
        for (auto& d : shape) ls >> d;
        require(bool(ls), "io-error", "bad tensor table line: " + line);
        info.tensors.push_back({name, shape});
    }
    std::getline(f, line);
    require(line == "data", "io-error", "checkpoint missing data marker");
    info.payload_start = f.tellg();
    return info;
}

/// Loads the payload into an existing parameter set (typically a freshly
/// constructed model built from the checkpoint's own config).
template <typename T>
void load_checkpoint_params(const std::string& path, ParamSet<T>& params) {
    CheckpointInfo info = read_checkpoint_info(path);
    require(info.tensors.size() == params.size(), "io-error",
            "checkpoint holds " + std::to_string(info.tensors.size()) + " tensors, model has " +
                std::to_string(params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        require(info.tensors[i].first == params[i].name, "io-error",
                "checkpoint tensor '" + info.tensors[i].first + "' does not match model '" +
                    params[i].name + "'");
        require(info.tensors[i].second == params[i].tensor.shape(), "io-error",
                "shape mismatch for " + params[i].name + ": checkpoint " +
                    str_of_shape(info.tensors[i].second) + " vs model " +
                    str_of_shape(params[i].tensor.shape()));
    }
    std::ifstream f(path, std::ios::binary);
    f.seekg(info.payload_start);
    auto read_into = [&](auto* dst, size_t n) {
        f.read(reinterpret_cast<char*>(dst), std::streamsize(n));
        require(bool(f), "io-error", "checkpoint payload truncated in " + path);
    };
    for (auto& p : params) {
        size_t count = p.tensor.value().size();
        if (info.precision == (sizeof(T) == 4 ? "f32" : "f64")) {
            read_into(p.tensor.value().data(), count * sizeof(T));
        } else if (info.precision == "f64") {
            std::vector<double> tmp(count);
            read_into(tmp.data(), count * sizeof(double));
            for (size_t i = 0; i < count; ++i) p.tensor.value()[i] = T(tmp[i]);
        } else {
            std::vector<float> tmp(count);
            read_into(tmp.data(), count * sizeof(float));
            for (size_t i = 0; i < count; ++i) p.tensor.value()[i] = T(tmp[i]);
        }
    }
}

}  // namespace pointmesh
