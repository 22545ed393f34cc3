#pragma once

// The full network: convolutional encoder, heatmap/target/grid decoder
// heads, point-guided feature sampling, a progressively masked transformer
// stack with dimension reduction, and the coordinate/camera output heads.

#include <cmath>
#include <string>
#include <vector>

#include "pointmesh/adam.hpp"
#include "pointmesh/common.hpp"
#include "pointmesh/meshtopo.hpp"
#include "pointmesh/tensor.hpp"

namespace pointmesh {

enum class SamplingMode { PointGuided, LearnedQueries };
enum class MaskMode { None, Single, Progressive };

struct ModelConfig {
    int image_size = 64;
    int backbone_channels = 32;
    int feature_h = 32;
    int feature_w = 32;
    int token_dim = 64;
    int joint_count = 14;
    int grid_side = 8;  // grid tokens come from a grid_side x grid_side pooled map
    int blocks = 2;     // one transformer block = two encoders
    std::vector<int> mask_schedule{7, 5, 3, 1};
    int heads = 4;
    int ffn_width = 0;      // 0 selects 2 * token_dim
    int dim_reduction = 2;  // token dim divisor after each block (1 disables)
    SamplingMode sampling_mode = SamplingMode::PointGuided;
    MaskMode mask_mode = MaskMode::Progressive;

    int grid_tokens() const { return grid_side * grid_side; }
    int encoder_count() const { return 2 * blocks; }
    int ffn() const { return ffn_width > 0 ? ffn_width : 2 * token_dim; }
    int backbone_res() const { return image_size / 4; }

    int dim_at_encoder(int e) const {  // dim entering encoder e
        int d = token_dim;
        for (int b = 0; b < e / 2; ++b) d /= dim_reduction;
        return d;
    }
    int final_dim() const {
        int d = token_dim;
        for (int b = 0; b < blocks; ++b) d /= dim_reduction;
        return d;
    }

    void validate() const {
        require(image_size > 0 && image_size % 4 == 0, "config-error",
                "image_size must be a positive multiple of 4");
        require(backbone_channels >= 2 && backbone_channels % 2 == 0, "config-error",
                "backbone_channels must be even and >= 2");
        require(feature_h == feature_w, "config-error", "feature map must be square");
        const int hb = backbone_res();
        require(feature_h == hb || feature_h == 2 * hb || feature_h == 4 * hb,
                "config-error", "feature resolution must be 1x, 2x or 4x the backbone map");
        require(grid_side >= 1 && hb % grid_side == 0, "config-error",
                "grid_side must divide the backbone resolution");
        require(token_dim % 4 == 0, "config-error",
                "token_dim must be a multiple of 4 for the positional encoding");
        require(joint_count >= 1 && blocks >= 1, "config-error",
                "joint_count and blocks must be positive");
        require(dim_reduction == 1 || dim_reduction == 2, "config-error",
                "dim_reduction must be 1 or 2");
        if (mask_mode == MaskMode::Progressive) {
            require(int(mask_schedule.size()) == encoder_count(), "config-error",
                    "mask_schedule must list one level per encoder (" +
                        std::to_string(encoder_count()) + ")");
            for (size_t i = 0; i < mask_schedule.size(); ++i) {
                require(mask_schedule[i] >= 1, "config-error", "mask levels must be >= 1");
                if (i > 0)
                    require(mask_schedule[i] <= mask_schedule[i - 1], "config-error",
                            "mask_schedule must be non-increasing");
            }
        }
        int d = token_dim;
        for (int b = 0; b <= blocks; ++b) {
            require(d % heads == 0, "config-error",
                    "token dim " + std::to_string(d) + " is not divisible by " +
                        std::to_string(heads) + " heads");
            if (b < blocks) d /= dim_reduction;
        }
        require(final_dim() >= 3, "config-error",
                "final token dim must be >= 3 for the coordinate head");
    }
};

template <typename T>
struct ModelOutput {
    Tensor<T> coarse;            // N_c x 3
    Tensor<T> dense;             // dense_count x 3
    Tensor<T> joints;            // K x 3, direct head output
    Tensor<T> joints_regressed;  // K x 3, R * dense
    Tensor<T> camera;            // [1,3] = (s, t_x, t_y), s > 0
    Tensor<T> heatmaps;          // N_c x h x w in (0,1)
    Tensor<T> target_feature;    // D x h x w after positional encoding
    Tensor<T> grid_feature;      // D x grid_side x grid_side
};

namespace detail {

template <typename T>
Tensor<T> make_param(Shape shape, Rng& rng, double lo, double hi) {
    std::vector<T> data(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : data) v = T(rng.uniform(lo, hi));
    return Tensor<T>::from(std::move(shape), std::move(data), true);
}

template <typename T>
Tensor<T> xavier(Shape shape, int fan_in, int fan_out, Rng& rng) {
    double a = std::sqrt(6.0 / double(fan_in + fan_out));
    return make_param<T>(std::move(shape), rng, -a, a);
}

}  // namespace detail

template <typename T>
struct Linear {
    Tensor<T> w;  // [in, out]
    Tensor<T> b;  // [out]

    static Linear make(int in, int out, Rng& rng) {
        return {detail::xavier<T>({in, out}, in, out, rng), Tensor<T>::zeros({out}, true)};
    }
    Tensor<T> operator()(const Tensor<T>& x) const { return add_bias(matmul(x, w), b); }
    void reg(ParamSet<T>& ps, const std::string& prefix) {
        ps.push_back({prefix + ".w", w});
        ps.push_back({prefix + ".b", b});
    }
};

template <typename T>
struct ConvLayer {
    Tensor<T> k;  // [cout, cin, ks, ks]
    Tensor<T> b;  // [cout]
    int stride = 1, pad = 0;

    static ConvLayer make(int cout, int cin, int ksize, int stride, int pad, Rng& rng) {
        int fan_in = cin * ksize * ksize, fan_out = cout * ksize * ksize;
        return {detail::xavier<T>({cout, cin, ksize, ksize}, fan_in, fan_out, rng),
                Tensor<T>::zeros({cout}, true), stride, pad};
    }
    Tensor<T> operator()(const Tensor<T>& x) const {
        return add_channel_bias(conv2d(x, k, stride, pad), b);
    }
    void reg(ParamSet<T>& ps, const std::string& prefix) {
        ps.push_back({prefix + ".k", k});
        ps.push_back({prefix + ".b", b});
    }
};

template <typename T>
struct NormLayer {
    Tensor<T> gain, bias;

    static NormLayer make(int d) {
        return {Tensor<T>::filled({d}, T(1), true), Tensor<T>::zeros({d}, true)};
    }
    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
    void reg(ParamSet<T>& ps, const std::string& prefix) {
        ps.push_back({prefix + ".g", gain});
        ps.push_back({prefix + ".b", bias});
    }
};

/// Pre-norm transformer encoder: masked multi-head self-attention and a
/// feed-forward, both behind residual connections.
template <typename T>
struct EncoderLayer {
    NormLayer<T> ln1, ln2;
    Linear<T> wq, wk, wv, wo;
    Linear<T> ff1, ff2;
    int heads = 1;

    static EncoderLayer make(int dim, int heads, int ffn, Rng& rng) {
        EncoderLayer e;
        e.ln1 = NormLayer<T>::make(dim);
        e.wq = Linear<T>::make(dim, dim, rng);
        e.wk = Linear<T>::make(dim, dim, rng);
        e.wv = Linear<T>::make(dim, dim, rng);
        e.wo = Linear<T>::make(dim, dim, rng);
        e.ln2 = NormLayer<T>::make(dim);
        e.ff1 = Linear<T>::make(dim, ffn, rng);
        e.ff2 = Linear<T>::make(ffn, dim, rng);
        e.heads = heads;
        return e;
    }

    Tensor<T> forward(const Tensor<T>& x, const BoolMask& mask,
                      std::vector<Mat>* attention_probe) const {
        const int dim = x.dim(1);
        const int dh = dim / heads;
        auto h = ln1(x);
        auto q = wq(h), k = wk(h), v = wv(h);
        std::vector<Tensor<T>> head_outputs;
        head_outputs.reserve(static_cast<size_t>(heads));
        for (int hd = 0; hd < heads; ++hd) {
            auto qh = slice_cols(q, hd * dh, (hd + 1) * dh);
            auto kh = slice_cols(k, hd * dh, (hd + 1) * dh);
            auto vh = slice_cols(v, hd * dh, (hd + 1) * dh);
            auto scores = scale(matmul_nt(qh, kh), 1.0 / std::sqrt(double(dh)));
            auto probs = masked_softmax(scores, mask);
            if (attention_probe) {
                Mat pm(probs.dim(0), probs.dim(1));
                for (size_t i = 0; i < probs.value().size(); ++i)
                    pm.v[i] = double(probs.value()[i]);
                attention_probe->push_back(std::move(pm));
            }
            head_outputs.push_back(matmul(probs, vh));
        }
        auto attended = wo(concat_cols(head_outputs));
        auto x1 = add(x, attended);
        auto x2 = add(x1, ff2(gelu(ff1(ln2(x1)))));
        return x2;
    }

    void reg(ParamSet<T>& ps, const std::string& prefix) {
        ln1.reg(ps, prefix + ".ln1");
        wq.reg(ps, prefix + ".q");
        wk.reg(ps, prefix + ".k");
        wv.reg(ps, prefix + ".v");
        wo.reg(ps, prefix + ".o");
        ln2.reg(ps, prefix + ".ln2");
        ff1.reg(ps, prefix + ".ff1");
        ff2.reg(ps, prefix + ".ff2");
    }
};

/// 2-D sinusoidal positional encoding: the first half of the channels encode
/// the row, the second half the column, each as interleaved sin/cos pairs.
template <typename T>
Tensor<T> sinusoidal_pe(int d, int h, int w) {
    require(d % 4 == 0, "config-error", "positional encoding needs dim divisible by 4");
    auto pe = Tensor<T>::zeros({d, h, w});
    const int half = d / 2;
    for (int c = 0; c < d; ++c) {
        const bool row_part = c < half;
        const int within = row_part ? c : c - half;
        const double omega = std::pow(10000.0, -double(2 * (within / 2)) / double(half));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double pos = row_part ? (y + 0.5) / double(h) : (x + 0.5) / double(w);
                double angle = 2.0 * M_PI * pos * omega;
                pe.value()[(size_t(c) * h + y) * w + x] =
                    T(within % 2 == 0 ? std::sin(angle) : std::cos(angle));
            }
    }
    return pe;
}

/// Normalized heatmap-weighted spatial pooling of the target feature: one
/// D-vector per vertex. A one-hot heatmap reads out the feature column at
/// its pixel bit-for-bit.
template <typename T>
Tensor<T> point_guided_sampling(const Tensor<T>& heatmaps, const Tensor<T>& feature) {
    require(heatmaps.ndim() == 3 && feature.ndim() == 3, "dim-error",
            "point_guided_sampling expects [N,h,w] heatmaps and [D,h,w] features");
    require(heatmaps.dim(1) == feature.dim(1) && heatmaps.dim(2) == feature.dim(2),
            "config-error", "heatmaps and target feature must share their resolution");
    for (long i = 0; i < heatmaps.size(); ++i)
        require(heatmaps.value()[size_t(i)] >= T(0), "contract-error",
                "point_guided_sampling needs non-negative heatmaps");
    const int n = heatmaps.dim(0), d = feature.dim(0);
    const int p = heatmaps.dim(1) * heatmaps.dim(2);
    auto hm = reshape(heatmaps, {n, p});
    auto fm = reshape(feature, {d, p});
    return matmul_nt(row_normalize(hm, 1e-8), fm);
}

template <typename T>
class MeshRegressor {
public:
    MeshRegressor(const ModelConfig& config, const TemplateMesh& mesh, uint64_t seed)
        : cfg_(config), coarse_count_(mesh.coarse_count()) {
        cfg_.validate();
        require(cfg_.joint_count == mesh.joint_count(), "config-error",
                "config joint_count does not match the template skeleton");
        Rng rng(seed);
        const int c = cfg_.backbone_channels, d = cfg_.token_dim;
        const int nc = coarse_count_;

        // stride-2 halving of an even map cannot satisfy conv2d's integral
        // output-size contract with an odd kernel, so each downsampling stage
        // is a unit-stride conv followed by a 2x average pool
        conv1_ = ConvLayer<T>::make(c / 2, 3, 3, 1, 1, rng);
        conv2_ = ConvLayer<T>::make(c, c / 2, 3, 1, 1, rng);
        conv3_ = ConvLayer<T>::make(c, c, 3, 1, 1, rng);
        heat_trunk_ = ConvLayer<T>::make(c / 2, c, 3, 1, 1, rng);
        heat_proj_ = ConvLayer<T>::make(nc, c / 2, 1, 1, 0, rng);
        target_trunk_ = ConvLayer<T>::make(c / 2, c, 3, 1, 1, rng);
        target_proj_ = ConvLayer<T>::make(d, c / 2, 1, 1, 0, rng);
        grid_proj_ = ConvLayer<T>::make(d, c, 1, 1, 0, rng);

        joint_tokens_ = detail::make_param<T>({cfg_.joint_count, d}, rng, -0.5, 0.5);
        vertex_queries_ = detail::make_param<T>({nc, d}, rng, -0.5, 0.5);
        const int t = token_count();
        id_embed_ = detail::make_param<T>({t, d}, rng, -0.5, 0.5);
        id_proj_ = Linear<T>::make(2 * d, d, rng);

        for (int e = 0; e < cfg_.encoder_count(); ++e)
            encoders_.push_back(
                EncoderLayer<T>::make(cfg_.dim_at_encoder(e), cfg_.heads,
                                      std::max(1, cfg_.ffn() / (cfg_.token_dim /
                                                                cfg_.dim_at_encoder(e))),
                                      rng));
        if (cfg_.dim_reduction > 1)
            for (int b = 0; b < cfg_.blocks; ++b) {
                int din = cfg_.dim_at_encoder(2 * b);
                reductions_.push_back(Linear<T>::make(din, din / cfg_.dim_reduction, rng));
            }
        final_norm_ = NormLayer<T>::make(cfg_.final_dim());
        coord_head_ = Linear<T>::make(cfg_.final_dim(), 3, rng);
        camera_head_ = Linear<T>::make(cfg_.final_dim(), 3, rng);

        pe_ = sinusoidal_pe<T>(d, cfg_.feature_h, cfg_.feature_w);
        u_matrix_ = Tensor<T>::from_mat(mesh.U);
        r_matrix_ = Tensor<T>::from_mat(mesh.R);

        for (int e = 0; e < cfg_.encoder_count(); ++e) {
            int level;
            switch (cfg_.mask_mode) {
                case MaskMode::None: level = 0; break;
                case MaskMode::Single: level = 1; break;
                default: level = cfg_.mask_schedule[size_t(e)];
            }
            if (level == 0) {
                AttentionMask open;
                open.level = 0;
                open.allowed = BoolMask(t, t, true);
                masks_.push_back(std::move(open));
            } else {
                masks_.push_back(
                    build_attention_mask(mesh.hop, level, cfg_.joint_count, cfg_.grid_tokens()));
            }
        }

        register_params();
    }

    const ModelConfig& config() const { return cfg_; }
    int token_count() const { return coarse_count_ + cfg_.joint_count + cfg_.grid_tokens(); }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }
    const std::vector<AttentionMask>& masks() const { return masks_; }

    /// When set, every encoder appends one T x T attention matrix per head.
    void set_attention_probe(std::vector<Mat>* probe) { attention_probe_ = probe; }

    /// Strided convolution stack: [3,S,S] -> [C, S/4, S/4].
    Tensor<T> encode_backbone(const Tensor<T>& image) const {
        require(image.ndim() == 3 && image.dim(0) == 3 && image.dim(1) == cfg_.image_size &&
                    image.dim(2) == cfg_.image_size,
                "dim-error", "expected a [3," + std::to_string(cfg_.image_size) + "," +
                                 std::to_string(cfg_.image_size) + "] image");
        auto s1 = avg_pool2d(gelu(conv1_(image)), 2);
        auto s2 = avg_pool2d(gelu(conv2_(s1)), 2);
        return gelu(conv3_(s2));
    }

    ModelOutput<T> forward(const Tensor<T>& image) const {
        auto xb = encode_backbone(image);

        auto up = xb;
        for (int r = cfg_.backbone_res(); r < cfg_.feature_h; r *= 2) up = upsample2x(up);
        auto heatmaps = sigmoid(heat_proj_(gelu(heat_trunk_(up))));
        auto target = add(target_proj_(gelu(target_trunk_(up))), pe_);

        auto pooled = cfg_.backbone_res() == cfg_.grid_side
                          ? xb
                          : avg_pool2d(xb, cfg_.backbone_res() / cfg_.grid_side);
        auto grid_map = grid_proj_(pooled);
        auto grid_tokens =
            transpose2d(reshape(grid_map, {cfg_.token_dim, cfg_.grid_tokens()}));

        Tensor<T> vertex_tokens = cfg_.sampling_mode == SamplingMode::PointGuided
                                      ? point_guided_sampling(heatmaps, target)
                                      : vertex_queries_;

        auto tokens = concat_rows<T>({vertex_tokens, joint_tokens_, grid_tokens});
        tokens = id_proj_(concat_cols<T>({tokens, id_embed_}));

        for (int e = 0; e < cfg_.encoder_count(); ++e) {
            tokens = encoders_[size_t(e)].forward(tokens, masks_[size_t(e)].allowed,
                                                  attention_probe_);
            if (cfg_.dim_reduction > 1 && e % 2 == 1)
                tokens = reductions_[size_t(e / 2)](tokens);
        }
        tokens = final_norm_(tokens);

        const int nc = coarse_count_, k = cfg_.joint_count;
        auto coords = coord_head_(slice_rows(tokens, 0, nc + k));
        ModelOutput<T> out;
        out.coarse = slice_rows(coords, 0, nc);
        out.joints = slice_rows(coords, nc, nc + k);
        out.camera = make_camera(camera_head_(mean_rows(slice_rows(tokens, nc + k, token_count()))));
        out.heatmaps = heatmaps;
        out.target_feature = target;
        out.grid_feature = grid_map;
        out.dense = matmul(u_matrix_, out.coarse);
        out.joints_regressed = matmul(r_matrix_, out.dense);
        return out;
    }

private:
    void register_params() {
        conv1_.reg(params_, "backbone.conv1");
        conv2_.reg(params_, "backbone.conv2");
        conv3_.reg(params_, "backbone.conv3");
        heat_trunk_.reg(params_, "heat.trunk");
        heat_proj_.reg(params_, "heat.proj");
        target_trunk_.reg(params_, "target.trunk");
        target_proj_.reg(params_, "target.proj");
        grid_proj_.reg(params_, "grid.proj");
        params_.push_back({"tokens.joint", joint_tokens_});
        params_.push_back({"tokens.vertex_queries", vertex_queries_});
        params_.push_back({"tokens.id_embed", id_embed_});
        id_proj_.reg(params_, "tokens.id_proj");
        for (size_t e = 0; e < encoders_.size(); ++e)
            encoders_[e].reg(params_, "enc" + std::to_string(e));
        for (size_t b = 0; b < reductions_.size(); ++b)
            reductions_[b].reg(params_, "reduce" + std::to_string(b));
        final_norm_.reg(params_, "final_ln");
        coord_head_.reg(params_, "head.coord");
        camera_head_.reg(params_, "head.camera");
    }

    ModelConfig cfg_;
    int coarse_count_;

    ConvLayer<T> conv1_, conv2_, conv3_;
    ConvLayer<T> heat_trunk_, heat_proj_, target_trunk_, target_proj_, grid_proj_;
    Tensor<T> joint_tokens_, vertex_queries_, id_embed_;
    Linear<T> id_proj_;
    std::vector<EncoderLayer<T>> encoders_;
    std::vector<Linear<T>> reductions_;
    NormLayer<T> final_norm_;
    Linear<T> coord_head_, camera_head_;

    Tensor<T> pe_;
    Tensor<T> u_matrix_, r_matrix_;
    std::vector<AttentionMask> masks_;
    ParamSet<T> params_;
    std::vector<Mat>* attention_probe_ = nullptr;
};

}  // namespace pointmesh
