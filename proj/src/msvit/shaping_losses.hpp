// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Sparsity losses on the soft gate outputs m [B x N_c] (taken before the
// straight-through threshold).
//
//   l0   : mean_b max(0, mean_i m_bi - g*)
//   bas  : CvM(all m_bi  |  RelaxedBernoulli(g*, tau_p))
//   gbas : sum_i CvM(m_:,i | RelaxedBernoulli(theta_i, tau_p))
//          + CvM(theta | Normal(g*, sigma))
//
// CvM(x | F) = sum_k (F(x_(k)) - k / (n + 1))^2 over the ascending order
// statistics; the sort permutation is a constant of the backward pass.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "msvit/autodiff.hpp"
#include "msvit/params.hpp"

namespace msvit {

enum class GateLossKind { l0, bas, gbas };

GateLossKind parse_gate_loss(const std::string& s);
const char* gate_loss_name(GateLossKind k);

enum class PriorInit { ctr, constant };

struct LossConfig {
    GateLossKind kind = GateLossKind::gbas;
    double g_star = 0.25;
    double lambda = 4.0;
    double prior_temperature = 0.3;
    double hyperprior_variance = 0.1;
    PriorInit prior_init = PriorInit::ctr;

    void validate() const;
    double hyperprior_std() const;
};

inline constexpr double kThetaMin = 1e-4;
inline constexpr double kThetaMax = 1.0 - 1e-4;

double relaxed_bernoulli_cdf(double v, double pi, double tau);
// Throws std::invalid_argument when std_dev <= 0.
double gaussian_cdf(double v, double mean, double std_dev);

using CdfFn = std::function<ad::Var(const ad::Var&)>;

ad::Var cvm_statistic(const ad::Var& samples, const CdfFn& cdf);
double cvm_statistic(std::span<const double> samples, const std::function<double(double)>& cdf);

ad::Var loss_l0(const ad::Var& m, double g_star);
ad::Var loss_bas(const ad::Var& m, double g_star, double prior_temperature);

// Learnable per-position priors: theta = clamp(sigmoid(raw)).
struct PriorParams {
    ad::Var raw;  // [N_c]
    double g_star = 0.25;
    double sigma = 0.0;
    double temperature = 0.3;

    static void init(ParameterStore& store, std::size_t grid_side, const LossConfig& cfg);
    static PriorParams bind(const Binding& b, const LossConfig& cfg);

    ad::Var theta() const;
};

// sigma == 0 ties every theta_i to g* and drops the hyperprior term.
ad::Var loss_gbas(const ad::Var& m, const PriorParams& priors);

// Dispatch on cfg.kind; priors is only consulted for gbas.
ad::Var gate_loss(const ad::Var& m, const LossConfig& cfg, const PriorParams* priors);

// Inverse normalised distance to the grid centre, shifted and scaled so the
// mean is g* and all values stay inside [kThetaMin, kThetaMax].
std::vector<double> ctr_init(std::size_t grid_side, double g_star);

}  // namespace msvit
