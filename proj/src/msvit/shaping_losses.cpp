// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include "msvit/shaping_losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "msvit/errors.hpp"

namespace msvit {

GateLossKind parse_gate_loss(const std::string& s) {
    if (s == "l0") return GateLossKind::l0;
    if (s == "bas") return GateLossKind::bas;
    if (s == "gbas") return GateLossKind::gbas;
    throw ConfigError("loss.kind: unknown gate loss '" + s + "' (expected l0, bas or gbas)");
}

const char* gate_loss_name(GateLossKind k) {
    switch (k) {
        case GateLossKind::l0: return "l0";
        case GateLossKind::bas: return "bas";
        case GateLossKind::gbas: return "gbas";
    }
    return "unknown";
}

void LossConfig::validate() const {
    if (!(g_star > 0.0 && g_star < 1.0)) throw ConfigError("loss.g_star must lie in (0, 1)");
    if (!(lambda >= 0.0)) throw ConfigError("loss.lambda must be non-negative");
    if (!(prior_temperature > 0.0)) throw ConfigError("loss.prior_temperature must be positive");
    if (!(hyperprior_variance >= 0.0)) throw ConfigError("loss.hyperprior_variance must be >= 0");
}

double LossConfig::hyperprior_std() const { return std::sqrt(hyperprior_variance); }

double relaxed_bernoulli_cdf(double v, double pi, double tau) {
    const double x = std::clamp(v, 1e-12, 1.0 - 1e-12);
    const double p = std::clamp(pi, 1e-12, 1.0 - 1e-12);
    const double z = tau * (std::log(x) - std::log1p(-x)) - (std::log(p) - std::log1p(-p));
    return 1.0 / (1.0 + std::exp(-z));
}

double gaussian_cdf(double v, double mean, double std_dev) {
    if (!(std_dev > 0.0)) throw std::invalid_argument("gaussian_cdf: std must be positive");
    return 0.5 * std::erfc(-(v - mean) / (std_dev * std::sqrt(2.0)));
}

namespace {

std::vector<std::size_t> ascending_order(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    return idx;
}

Tensor plotting_positions(std::size_t n) {
    Tensor t(Shape{n});
    for (std::size_t k = 0; k < n; ++k)
        t[k] = static_cast<double>(k + 1) / static_cast<double>(n + 1);
    return t;
}

}  // namespace

ad::Var cvm_statistic(const ad::Var& samples, const CdfFn& cdf) {
    const std::size_t n = samples->value.size();
    if (n == 0) throw std::invalid_argument("cvm_statistic: no samples");
    const ad::Var sorted = ad::take(samples, ascending_order(samples->value.data()));
    const ad::Var diff = ad::sub(cdf(sorted), ad::constant(plotting_positions(n)));
    return ad::sum(ad::square(diff));
}

double cvm_statistic(std::span<const double> samples, const std::function<double(double)>& cdf) {
    if (samples.empty()) throw std::invalid_argument("cvm_statistic: no samples");
    const auto order = ascending_order(samples);
    const double n1 = static_cast<double>(samples.size() + 1);
    double s = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const double d = cdf(samples[order[k]]) - static_cast<double>(k + 1) / n1;
        s += d * d;
    }
    return s;
}

ad::Var loss_l0(const ad::Var& m, double g_star) {
    return ad::mean(ad::relu(ad::add_scalar(ad::row_mean(m), -g_star)));
}

ad::Var loss_bas(const ad::Var& m, double g_star, double prior_temperature) {
    const ad::Var flat = ad::reshape(m, Shape{m->value.size()});
    const ad::Var pi = ad::constant(Tensor(Shape{1}, g_star));
    return cvm_statistic(flat, [&](const ad::Var& v) {
        return ad::relaxed_bernoulli_cdf(v, pi, prior_temperature);
    });
}

void PriorParams::init(ParameterStore& store, std::size_t grid_side, const LossConfig& cfg) {
    std::vector<double> theta = cfg.prior_init == PriorInit::ctr
                                    ? ctr_init(grid_side, cfg.g_star)
                                    : std::vector<double>(grid_side * grid_side, cfg.g_star);
    Tensor raw(Shape{theta.size()});
    for (std::size_t i = 0; i < theta.size(); ++i) raw[i] = std::log(theta[i]) - std::log1p(-theta[i]);
    store.add("prior.theta_raw", std::move(raw), ParamGroup::prior);
}

PriorParams PriorParams::bind(const Binding& b, const LossConfig& cfg) {
    return PriorParams{b("prior.theta_raw"), cfg.g_star, cfg.hyperprior_std(), cfg.prior_temperature};
}

ad::Var PriorParams::theta() const { return ad::clamp(ad::sigmoid(raw), kThetaMin, kThetaMax); }

ad::Var loss_gbas(const ad::Var& m, const PriorParams& priors) {
    if (m->value.rank() != 2) throw std::invalid_argument("loss_gbas: m must be [B x N_c]");
    const std::size_t b = m->value.dim(0), cells = m->value.dim(1);
    if (b == 0) throw std::invalid_argument("loss_gbas: empty batch");
    const bool tied = priors.sigma == 0.0;
    const ad::Var theta = tied ? ad::constant(Tensor(Shape{cells}, priors.g_star)) : priors.theta();
    if (theta->value.size() != cells) {
        throw std::invalid_argument("loss_gbas: " + std::to_string(theta->value.size()) +
                                    " priors for " + std::to_string(cells) + " positions");
    }
    ad::Var total;
    for (std::size_t i = 0; i < cells; ++i) {
        std::vector<std::size_t> column(b);
        for (std::size_t r = 0; r < b; ++r) column[r] = r * cells + i;
        const ad::Var samples = ad::take(m, std::move(column));
        const ad::Var pi = ad::take(theta, {i});
        const ad::Var term = cvm_statistic(samples, [&](const ad::Var& v) {
            return ad::relaxed_bernoulli_cdf(v, pi, priors.temperature);
        });
        total = total ? ad::add(total, term) : term;
    }
    if (tied) return total;
    const ad::Var mean = ad::constant(Tensor(Shape{1}, priors.g_star));
    const ad::Var hyper = cvm_statistic(theta, [&](const ad::Var& v) {
        return ad::gaussian_cdf(v, mean, priors.sigma);
    });
    return ad::add(total, hyper);
}

ad::Var gate_loss(const ad::Var& m, const LossConfig& cfg, const PriorParams* priors) {
    switch (cfg.kind) {
        case GateLossKind::l0: return loss_l0(m, cfg.g_star);
        case GateLossKind::bas: return loss_bas(m, cfg.g_star, cfg.prior_temperature);
        case GateLossKind::gbas:
            if (!priors) throw std::invalid_argument("gate_loss: gbas requires prior parameters");
            return loss_gbas(m, *priors);
    }
    throw std::logic_error("gate_loss: unreachable");
}

std::vector<double> ctr_init(std::size_t grid_side, double g_star) {
    if (grid_side == 0) throw std::invalid_argument("ctr_init: grid_side must be >= 1");
    const std::size_t n = grid_side * grid_side;
    const double c = 0.5 * static_cast<double>(grid_side);
    std::vector<double> dist(n);
    for (std::size_t r = 0; r < grid_side; ++r)
        for (std::size_t col = 0; col < grid_side; ++col) {
            const double dy = static_cast<double>(r) + 0.5 - c;
            const double dx = static_cast<double>(col) + 0.5 - c;
            dist[r * grid_side + col] = std::sqrt(dx * dx + dy * dy);
        }
    const double max_d = *std::max_element(dist.begin(), dist.end());
    if (max_d == 0.0) return std::vector<double>(n, g_star);

    std::vector<double> raw(n);
    for (std::size_t i = 0; i < n; ++i) raw[i] = 1.0 - dist[i] / max_d;
    const double raw_mean = std::accumulate(raw.begin(), raw.end(), 0.0) / static_cast<double>(n);
    const double hi = *std::max_element(raw.begin(), raw.end()) - raw_mean;
    const double lo = raw_mean - *std::min_element(raw.begin(), raw.end());
    double gain = 1.0;
    if (hi > 0.0) gain = std::min(gain, (kThetaMax - g_star) / hi);
    if (lo > 0.0) gain = std::min(gain, (g_star - kThetaMin) / lo);
    std::vector<double> theta(n);
    for (std::size_t i = 0; i < n; ++i)
        theta[i] = std::clamp(g_star + gain * (raw[i] - raw_mean), kThetaMin, kThetaMax);
    return theta;
}

}  // namespace msvit
