#pragma once

#include <memory>
#include <string_view>
#include <vector>

#include "common.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "features.hpp"

namespace tvbpr {

/// Parameters shared by all epochs.
template <class Real>
struct GlobalParams {
    std::vector<Real> alpha;        // single entry; inert for ranking
    std::vector<Real> user_bias;    // |U|; inert for ranking
    Matrix<Real> gamma_user;        // |U| x K
    Matrix<Real> gamma_item;        // |I| x K
    Matrix<Real> theta_user;        // |U| x K'
    Matrix<Real> embedding;         // K' x F
    std::vector<Real> visual_bias;  // F

    bool operator==(const GlobalParams&) const = default;
};

/// Parameters attached to one fashion epoch. Families a variant does not use
/// stay empty; the static item/category bias of non-temporal variants lives
/// in epoch 0.
template <class Real>
struct EpochParams {
    Matrix<Real> delta_embedding;         // K' x F
    std::vector<Real> delta_visual_bias;  // F
    std::vector<Real> weighting;          // K'
    std::vector<Real> bias_weighting;     // F
    std::vector<Real> item_bias;          // |I|
    std::vector<Real> category_bias;      // |C|

    bool operator==(const EpochParams&) const = default;
};

template <class Real>
struct PersonalDriftParams {
    Matrix<Real> eta;                // |U| x K'
    std::vector<double> mean_time;   // t_u, seconds

    bool operator==(const PersonalDriftParams&) const = default;
};

struct ModelShape {
    std::size_t num_users = 0;
    std::size_t num_items = 0;
    std::size_t num_categories = 1;

    bool operator==(const ModelShape&) const = default;
};

template <class Real>
class BasicModel {
public:
    using value_type = Real;

    TrainConfig config;
    ModelShape shape;
    GlobalParams<Real> global;
    std::vector<EpochParams<Real>> epochs;
    PersonalDriftParams<Real> drift;

    BasicModel() = default;

    /// Allocates every parameter family the variant uses and draws each entry
    /// i.i.d. uniform in [0, 1).
    BasicModel(const TrainConfig& cfg, const ModelShape& shp, std::shared_ptr<const FeatureStore> features,
               std::shared_ptr<const Taxonomy> taxonomy, std::uint64_t seed)
        : config(cfg), shape(shp), features_(std::move(features)), taxonomy_(std::move(taxonomy)) {
        const auto& v = config.variant;
        if (v.use_visual || v.use_temporal_visual) {
            if (!features_) throw ValidationError("visual variant requires a feature store");
            if (features_->num_items() != shape.num_items) throw ValidationError("feature store does not cover all items");
            config.feature_dim = features_->dim();
        }
        if (v.use_taxonomy && !taxonomy_) throw ValidationError("taxonomy variant requires a taxonomy");
        if (taxonomy_ && taxonomy_->category_of.size() != shape.num_items)
            throw ValidationError("taxonomy does not cover all items");
        if (v.use_taxonomy) shape.num_categories = taxonomy_->num_categories();

        allocate();

        Rng rng(seed);
        for_each_family([&](std::string_view, std::size_t, std::span<Real> values) {
            for (auto& x : values) x = static_cast<Real>(rng.uniform());
        });
    }

    const FeatureStore* features() const noexcept { return features_.get(); }
    const Taxonomy* taxonomy() const noexcept { return taxonomy_.get(); }
    std::shared_ptr<const FeatureStore> shared_features() const { return features_; }
    std::shared_ptr<const Taxonomy> shared_taxonomy() const { return taxonomy_; }

    void attach(std::shared_ptr<const FeatureStore> features, std::shared_ptr<const Taxonomy> taxonomy) {
        features_ = std::move(features);
        taxonomy_ = std::move(taxonomy);
    }

    /// Sizes every family the variant uses from `config` and `shape`, zero-filled.
    void allocate() {
        const auto& v = config.variant;
        const std::size_t K = config.dims, Kv = v.use_visual ? config.visual_dims : 0;
        const std::size_t F = v.use_visual ? config.feature_dim : 0;
        const std::size_t U = shape.num_users, I = shape.num_items, C = shape.num_categories;

        global.alpha.assign(1, Real{0});
        global.user_bias.assign(U, Real{0});
        global.gamma_user = Matrix<Real>(U, K);
        global.gamma_item = Matrix<Real>(I, K);
        global.theta_user = Matrix<Real>(U, Kv);
        global.embedding = Matrix<Real>(Kv, F);
        if (v.use_visual && v.use_temporal_visual) global.visual_bias.assign(F, Real{0});

        epochs.resize(config.model_epochs());
        for (std::size_t e = 0; e < epochs.size(); ++e) {
            auto& ep = epochs[e];
            if (v.use_visual && v.use_temporal_visual) {
                ep.delta_embedding = Matrix<Real>(Kv, F);
                ep.delta_visual_bias.assign(F, Real{0});
                ep.weighting.assign(Kv, Real{0});
                ep.bias_weighting.assign(F, Real{0});
            }
            if (e == 0 || v.use_temporal_nonvisual) {
                ep.item_bias.assign(I, Real{0});
                if (v.use_taxonomy) ep.category_bias.assign(C, Real{0});
            }
        }
        if (v.use_visual && v.use_personal_drift) {
            drift.eta = Matrix<Real>(U, Kv);
            drift.mean_time.assign(U, 0.0);
        }
    }

    const ModelVariant& variant() const noexcept { return config.variant; }
    std::size_t num_epochs() const noexcept { return epochs.size(); }
    std::size_t visual_dims() const noexcept { return global.embedding.rows(); }
    std::size_t latent_dims() const noexcept { return global.gamma_user.cols(); }

    // Epoch slot that stores the (possibly static) item and category biases.
    std::size_t bias_epoch(std::size_t ep) const noexcept { return config.variant.use_temporal_nonvisual ? ep : 0; }

    /// Visits every learned parameter family as fn(name, epoch, values);
    /// epoch is npos for global families. Order is fixed.
    template <class Fn>
    void for_each_family(Fn&& fn) {
        visit_families(*this, fn);
    }
    template <class Fn>
    void for_each_family(Fn&& fn) const {
        visit_families(*this, fn);
    }

    /// E f_i.
    std::vector<double> embed(ItemId i) const {
        std::vector<double> out(visual_dims());
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = features_->dot_embed(global.embedding.row(k), i);
        return out;
    }

    /// θ_i(ep) = E f_i ⊙ w(ep) + Δ_E(ep) f_i, or E f_i for static variants.
    std::vector<double> item_visual_factors(ItemId i, std::size_t ep) const {
        check_epoch(ep);
        auto out = embed(i);
        if (config.variant.use_temporal_visual) {
            const auto& e = epochs[ep];
            for (std::size_t k = 0; k < out.size(); ++k)
                out[k] = out[k] * static_cast<double>(e.weighting[k]) + features_->dot_embed(e.delta_embedding.row(k), i);
        }
        return out;
    }

    // sign(t - t_u) |t - t_u|^κ with the difference in days.
    double drift_scale(UserId u, Timestamp t) const {
        const double days = (static_cast<double>(t) - drift.mean_time[u]) / kSecondsPerDay;
        if (days == 0.0) return 0.0;
        return (days > 0 ? 1.0 : -1.0) * std::pow(std::abs(days), config.kappa);
    }

    /// θ_u(t); stationary θ_u unless personal drift is enabled.
    std::vector<double> user_visual_factors(UserId u, Timestamp t) const {
        const auto theta = global.theta_user.row(u);
        std::vector<double> out(theta.begin(), theta.end());
        if (config.variant.use_personal_drift) {
            const double s = drift_scale(u, t);
            const auto eta = drift.eta.row(u);
            for (std::size_t k = 0; k < out.size(); ++k) out[k] += s * static_cast<double>(eta[k]);
        }
        return out;
    }

    /// ⟨β ⊙ b(ep) + Δ_β(ep), f_i⟩; zero for variants without the visual bias term.
    double visual_bias(ItemId i, std::size_t ep) const {
        check_epoch(ep);
        if (global.visual_bias.empty()) return 0.0;
        const auto& e = epochs[ep];
        const auto f = (*features_)[i];
        double acc = 0.0;
        for (std::size_t k = 0; k < f.nnz(); ++k) {
            const auto j = f.index[k];
            acc += (static_cast<double>(global.visual_bias[j]) * static_cast<double>(e.bias_weighting[j]) +
                    static_cast<double>(e.delta_visual_bias[j])) *
                   f.value[k];
        }
        return acc;
    }

    // β_i(ep) + β_{C_i}(ep) + visual bias: everything that depends on the item but not the user.
    double item_offset(ItemId i, std::size_t ep) const {
        const auto& b = epochs[bias_epoch(ep)];
        double x = static_cast<double>(b.item_bias[i]);
        if (config.variant.use_taxonomy) x += static_cast<double>(b.category_bias[taxonomy_->category_of[i]]);
        return x + visual_bias(i, ep);
    }

    /// x̂_{u,i}(ep) evaluated at time t (t only matters under personal drift).
    double predict(UserId u, ItemId i, std::size_t ep, Timestamp t = 0) const {
        if (u >= shape.num_users) throw std::out_of_range("unknown user " + std::to_string(u));
        if (i >= shape.num_items) throw std::out_of_range("unknown item " + std::to_string(i));
        check_epoch(ep);
        double x = static_cast<double>(global.alpha[0]) + static_cast<double>(global.user_bias[u]) + item_offset(i, ep);
        x += dot(global.gamma_user.row(u), global.gamma_item.row(i));
        if (config.variant.use_visual) {
            const auto tu = user_visual_factors(u, t);
            const auto ti = item_visual_factors(i, ep);
            x += dot(std::span<const double>(tu), std::span<const double>(ti));
        }
        return x;
    }

    /// Per-user mean feedback date over the training positives.
    void set_mean_times(const Split& split) {
        if (drift.mean_time.empty()) return;
        for (std::size_t u = 0; u < split.train.size(); ++u) {
            double s = 0.0;
            for (const auto& p : split.train[u]) s += static_cast<double>(p.t);
            drift.mean_time[u] = split.train[u].empty() ? 0.0 : s / static_cast<double>(split.train[u].size());
        }
    }

    /// Same parameters in another scalar type.
    template <class Other>
    BasicModel<Other> cast() const {
        BasicModel<Other> out;
        out.config = config;
        out.shape = shape;
        out.attach(features_, taxonomy_);
        out.epochs.resize(epochs.size());
        out.drift.mean_time = drift.mean_time;
        auto conv_vec = [](const std::vector<Real>& v) { return std::vector<Other>(v.begin(), v.end()); };
        auto conv_mat = [&](const Matrix<Real>& m) {
            Matrix<Other> r(m.rows(), m.cols());
            std::copy(m.data().begin(), m.data().end(), r.data().begin());
            return r;
        };
        out.global = {conv_vec(global.alpha), conv_vec(global.user_bias), conv_mat(global.gamma_user),
                      conv_mat(global.gamma_item), conv_mat(global.theta_user), conv_mat(global.embedding),
                      conv_vec(global.visual_bias)};
        for (std::size_t e = 0; e < epochs.size(); ++e) {
            const auto& s = epochs[e];
            out.epochs[e] = {conv_mat(s.delta_embedding), conv_vec(s.delta_visual_bias), conv_vec(s.weighting),
                             conv_vec(s.bias_weighting),  conv_vec(s.item_bias),         conv_vec(s.category_bias)};
        }
        out.drift.eta = conv_mat(drift.eta);
        return out;
    }

    bool same_parameters(const BasicModel& other) const {
        return config == other.config && shape == other.shape && global == other.global && epochs == other.epochs &&
               drift == other.drift;
    }

private:
    std::shared_ptr<const FeatureStore> features_;
    std::shared_ptr<const Taxonomy> taxonomy_;

    void check_epoch(std::size_t ep) const {
        if (ep >= epochs.size())
            throw std::out_of_range("epoch " + std::to_string(ep) + " out of range [0, " + std::to_string(epochs.size()) + ")");
    }

    template <class Self, class Fn>
    static void visit_families(Self& self, Fn& fn) {
        constexpr auto npos = static_cast<std::size_t>(-1);
        auto& g = self.global;
        auto span_of = [](auto& c) { return std::span(c.data(), c.size()); };
        auto mat = [](auto& m) { return std::span(m.data().data(), m.data().size()); };
        fn("alpha", npos, span_of(g.alpha));
        fn("user_bias", npos, span_of(g.user_bias));
        fn("gamma_user", npos, mat(g.gamma_user));
        fn("gamma_item", npos, mat(g.gamma_item));
        fn("theta_user", npos, mat(g.theta_user));
        fn("embedding", npos, mat(g.embedding));
        fn("visual_bias", npos, span_of(g.visual_bias));
        for (std::size_t e = 0; e < self.epochs.size(); ++e) {
            auto& ep = self.epochs[e];
            fn("delta_embedding", e, mat(ep.delta_embedding));
            fn("delta_visual_bias", e, span_of(ep.delta_visual_bias));
            fn("weighting", e, span_of(ep.weighting));
            fn("bias_weighting", e, span_of(ep.bias_weighting));
            fn("item_bias", e, span_of(ep.item_bias));
            fn("category_bias", e, span_of(ep.category_bias));
        }
        fn("eta", npos, mat(self.drift.eta));
    }
};

using Model = BasicModel<float>;

/// Precomputed per-epoch item factors and offsets so that scoring a (u, i)
/// pair costs O(K + K') instead of O(K' nnz(f_i)). Borrows the model.
template <class Real>
class ScoringCache {
public:
    explicit ScoringCache(const BasicModel<Real>& model, unsigned threads = 1) : model_(&model) {
        const std::size_t N = model.num_epochs(), I = model.shape.num_items, Kv = model.visual_dims();
        factors_.assign(N, Matrix<Real>(I, model.variant().use_visual ? Kv : 0));
        offsets_.assign(N, std::vector<double>(I));
        parallel_for(I, threads, [&](std::size_t begin, std::size_t end, std::size_t) {
            for (std::size_t i = begin; i < end; ++i) {
                const auto item = static_cast<ItemId>(i);
                for (std::size_t e = 0; e < N; ++e) {
                    offsets_[e][i] = model.item_offset(item, e);
                    if (model.variant().use_visual) {
                        const auto f = model.item_visual_factors(item, e);
                        auto row = factors_[e].row(i);
                        for (std::size_t k = 0; k < Kv; ++k) row[k] = static_cast<Real>(f[k]);
                    }
                }
            }
        });
    }

    double score(UserId u, ItemId i, std::size_t ep, Timestamp t = 0) const {
        const auto& m = *model_;
        double x = static_cast<double>(m.global.alpha[0]) + static_cast<double>(m.global.user_bias[u]) + offsets_[ep][i];
        x += dot(m.global.gamma_user.row(u), m.global.gamma_item.row(i));
        if (m.variant().use_visual) {
            if (m.variant().use_personal_drift) {
                const auto tu = m.user_visual_factors(u, t);
                x += dot(std::span<const double>(tu), factors_[ep].row(i));
            } else {
                x += dot(m.global.theta_user.row(u), factors_[ep].row(i));
            }
        }
        return x;
    }

    std::span<const Real> item_factors(ItemId i, std::size_t ep) const { return factors_[ep].row(i); }
    double item_offset(ItemId i, std::size_t ep) const { return offsets_[ep][i]; }

private:
    const BasicModel<Real>* model_;
    std::vector<Matrix<Real>> factors_;
    std::vector<std::vector<double>> offsets_;
};

}  // namespace tvbpr
