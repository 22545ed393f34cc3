#include "pointmesh/runconfig.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace pointmesh {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        double d = std::stod(v, &used);
        require(used == v.size(), "config-error", "bad numeric value for " + key);
        return d;
    } catch (const Error&) {
        throw;
    } catch (...) {
        fail("config-error", "bad numeric value for " + key + ": '" + v + "'");
    }
}

int to_int(const std::string& key, const std::string& v) {
    double d = to_double(key, v);
    int i = int(d);
    require(double(i) == d, "config-error", key + " must be an integer");
    return i;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail("config-error", key + " must be true or false");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::istringstream is(v);
    std::string part;
    while (std::getline(is, part, ',')) {
        part = trim(part);
        if (!part.empty()) out.push_back(to_int(key, part));
    }
    require(!out.empty(), "config-error", key + " must list at least one value");
    return out;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        require(eq != std::string::npos, "config-error",
                "line " + std::to_string(line_no) + " is not a key = value pair");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        require(!key.empty() && !value.empty(), "config-error",
                "empty key or value on line " + std::to_string(line_no));

        if (key == "model.image_size") cfg.model.image_size = to_int(key, value);
        else if (key == "model.backbone_channels") cfg.model.backbone_channels = to_int(key, value);
        else if (key == "model.feature_h") cfg.model.feature_h = to_int(key, value);
        else if (key == "model.feature_w") cfg.model.feature_w = to_int(key, value);
        else if (key == "model.token_dim") cfg.model.token_dim = to_int(key, value);
        else if (key == "model.joint_count") cfg.model.joint_count = to_int(key, value);
        else if (key == "model.grid_side") cfg.model.grid_side = to_int(key, value);
        else if (key == "model.blocks") cfg.model.blocks = to_int(key, value);
        else if (key == "model.heads") cfg.model.heads = to_int(key, value);
        else if (key == "model.ffn_width") cfg.model.ffn_width = to_int(key, value);
        else if (key == "model.dim_reduction") cfg.model.dim_reduction = to_int(key, value);
        else if (key == "model.mask_schedule") cfg.model.mask_schedule = to_int_list(key, value);
        else if (key == "model.sampling_mode") {
            if (value == "point_guided") cfg.model.sampling_mode = SamplingMode::PointGuided;
            else if (value == "learned_queries") cfg.model.sampling_mode = SamplingMode::LearnedQueries;
            else fail("config-error", "model.sampling_mode must be point_guided or learned_queries");
        } else if (key == "model.mask_mode") {
            if (value == "none") cfg.model.mask_mode = MaskMode::None;
            else if (value == "single") cfg.model.mask_mode = MaskMode::Single;
            else if (value == "progressive") cfg.model.mask_mode = MaskMode::Progressive;
            else fail("config-error", "model.mask_mode must be none, single or progressive");
        }
        else if (key == "loss.w_v") cfg.weights.w_v = to_double(key, value);
        else if (key == "loss.w_j3d") cfg.weights.w_j3d = to_double(key, value);
        else if (key == "loss.w_j2d") cfg.weights.w_j2d = to_double(key, value);
        else if (key == "loss.w_bce") cfg.weights.w_bce = to_double(key, value);
        else if (key == "loss.w_dice") cfg.weights.w_dice = to_double(key, value);
        else if (key == "optim.learning_rate") cfg.learning_rate = to_double(key, value);
        else if (key == "optim.decayed_learning_rate") cfg.decayed_learning_rate = to_double(key, value);
        else if (key == "optim.epochs") cfg.epochs = to_int(key, value);
        else if (key == "optim.batch_size") cfg.batch_size = to_int(key, value);
        else if (key == "data.samples") cfg.samples = to_int(key, value);
        else if (key == "data.seed") cfg.seed = uint64_t(to_double(key, value));
        else if (key == "data.occlusion") cfg.occlusion = to_bool(key, value);
        else if (key == "run.output_dir") cfg.output_dir = value;
        else if (key == "run.precision") cfg.precision = value;
        else fail("config-error", "unknown configuration key '" + key + "'");
    }
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    require(bool(f), "io-error", "cannot read config file " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_config_text(buf.str());
}

std::string serialize_config(const RunConfig& c) {
    std::ostringstream os;
    os << "model.image_size = " << c.model.image_size << "\n";
    os << "model.backbone_channels = " << c.model.backbone_channels << "\n";
    os << "model.feature_h = " << c.model.feature_h << "\n";
    os << "model.feature_w = " << c.model.feature_w << "\n";
    os << "model.token_dim = " << c.model.token_dim << "\n";
    os << "model.joint_count = " << c.model.joint_count << "\n";
    os << "model.grid_side = " << c.model.grid_side << "\n";
    os << "model.blocks = " << c.model.blocks << "\n";
    os << "model.heads = " << c.model.heads << "\n";
    os << "model.ffn_width = " << c.model.ffn_width << "\n";
    os << "model.dim_reduction = " << c.model.dim_reduction << "\n";
    os << "model.mask_schedule = ";
    for (size_t i = 0; i < c.model.mask_schedule.size(); ++i)
        os << (i ? "," : "") << c.model.mask_schedule[i];
    os << "\n";
    os << "model.sampling_mode = "
       << (c.model.sampling_mode == SamplingMode::PointGuided ? "point_guided"
                                                              : "learned_queries")
       << "\n";
    os << "model.mask_mode = "
       << (c.model.mask_mode == MaskMode::None
               ? "none"
               : c.model.mask_mode == MaskMode::Single ? "single" : "progressive")
       << "\n";
    os << "loss.w_v = " << fmt(c.weights.w_v) << "\n";
    os << "loss.w_j3d = " << fmt(c.weights.w_j3d) << "\n";
    os << "loss.w_j2d = " << fmt(c.weights.w_j2d) << "\n";
    os << "loss.w_bce = " << fmt(c.weights.w_bce) << "\n";
    os << "loss.w_dice = " << fmt(c.weights.w_dice) << "\n";
    os << "optim.learning_rate = " << fmt(c.learning_rate) << "\n";
    os << "optim.decayed_learning_rate = " << fmt(c.decayed_learning_rate) << "\n";
    os << "optim.epochs = " << c.epochs << "\n";
    os << "optim.batch_size = " << c.batch_size << "\n";
    os << "data.samples = " << c.samples << "\n";
    os << "data.seed = " << c.seed << "\n";
    os << "data.occlusion = " << (c.occlusion ? "true" : "false") << "\n";
    os << "run.output_dir = " << c.output_dir << "\n";
    os << "run.precision = " << c.precision << "\n";
    return os.str();
}

}  // namespace pointmesh
