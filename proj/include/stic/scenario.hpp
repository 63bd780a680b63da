#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stic/config.hpp"
#include "stic/control.hpp"
#include "stic/parallel.hpp"

namespace stic {

/// Paired (common random numbers) estimate of J(a) - J(b).
struct PairedDifference {
    double mean = 0.0;
    double stderr_ = 0.0;
};

inline PairedDifference paired_performance_difference(const Problem& pr, const ControlPath& a, const ControlPath& b,
                                                      const SamplingPlan& plan) {
    const std::size_t n = plan_paths(plan);
    const TimePath abar = control_aggregate(pr, a);
    const TimePath bbar = control_aggregate(pr, b);
    std::vector<double> diff(n);
    parallel_for(n, plan.threads, [&](std::size_t s) {
        const NoiseRealization nz = plan_noise(pr, plan, s);
        const auto ja = path_performance(pr, simulate_forward(pr, a, abar, nz), a, abar);
        const auto jb = path_performance(pr, simulate_forward(pr, b, bbar, nz), b, bbar);
        diff[s] = (ja.first + ja.second) - (jb.first + jb.second);
    });
    PairedDifference out;
    out.stderr_ = detail::mean_stderr(diff, out.mean);
    return out;
}

/// Random admissible perturbation of u on rows [0, K-1]: entries u + a * w * xi, xi uniform
/// in [-1, 1], clipped to the box, with a = fraction * box width and w in (0, 1].
inline ControlPath random_perturbation(const Problem& pr, const ControlPath& u, double fraction, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> scale(0.1, 1.0);
    const double amp = fraction * pr.box().width() * scale(rng);
    ControlPath out = u;
    for (long n = 0; n < pr.grid().last(); ++n) {
        auto row = out.values[n];
        for (std::size_t i : pr.mesh().interior()) row[i] = pr.box().clip(row[i] + amp * unit(rng));
    }
    return out;
}

inline double sup_distance(const Problem& pr, const ControlPath& a, const ControlPath& b) {
    double d = 0.0;
    for (long n = 0; n <= pr.grid().last(); ++n) {
        for (std::size_t i : pr.mesh().interior()) d = std::max(d, std::abs(a.values[n][i] - b.values[n][i]));
    }
    return d;
}

struct PerturbationOutcome {
    std::size_t index = 0;
    double sup_norm = 0.0;
    double gap = 0.0;  ///< J(u_hat) - J(perturbed)
    double stderr_ = 0.0;
    bool passed = false;
};

struct ScenarioOptions {
    std::uint64_t seed = 0;
    std::size_t perturbations = 50;
    double perturbation_fraction = 0.1;
    double stationarity_tol = 1e-6;
    double feedback_tol = 1e-12;
    std::size_t sufficiency_samples = std::numeric_limits<std::size_t>::max();
    std::optional<SamplingPlan> monte_carlo;  ///< when set, the MC-mode fixed point is checked by paired MC
};

struct ScenarioReport {
    std::string coefficient_set;
    FeedbackSolution feedback;
    GradientField gradient;
    double stationarity = 0.0;
    double J = 0.0;
    std::vector<PerturbationOutcome> perturbations;
    SufficiencyReport sufficiency;
    bool monte_carlo = false;
    std::size_t mc_undefined_paths = 0;  ///< paths at u_hat whose performance is not finite
    FeedbackSolution mc_feedback;
    double mc_stationarity = 0.0;
    PerformanceEstimate mc_performance;
    std::vector<PerturbationOutcome> mc_perturbations;
    double stationarity_tol = 1e-6;

    std::size_t perturbation_failures() const {
        return static_cast<std::size_t>(std::count_if(perturbations.begin(), perturbations.end(),
                                                      [](const auto& p) { return !p.passed; }));
    }
    std::size_t mc_perturbation_failures() const {
        return static_cast<std::size_t>(std::count_if(mc_perturbations.begin(), mc_perturbations.end(),
                                                      [](const auto& p) { return !p.passed; }));
    }
    /// The sampled problem is undefined when some path leaves the domain of the reward.
    bool mc_applicable() const { return monte_carlo && mc_undefined_paths == 0; }
    bool passed() const {
        return feedback.converged && stationarity <= stationarity_tol && perturbation_failures() == 0 &&
               sufficiency.passed() &&
               (!mc_applicable() || (mc_feedback.converged && mc_stationarity <= stationarity_tol &&
                                 mc_perturbation_failures() == 0));
    }
};

inline FeedbackLaw feedback_law_for(const std::string& coefficient_set) {
    if (coefficient_set == "harvest_log") return FeedbackLaw::log;
    if (coefficient_set == "harvest_power") return FeedbackLaw::power;
    throw ConfigError("scenario: no closed-form feedback law for coefficient set '" + coefficient_set +
                      "' (use harvest_log or harvest_power)");
}

/// Deterministic-mode pipeline: feedback fixed point, stationarity residual, perturbation
/// test and sufficient conditions; optionally a paired Monte Carlo perturbation test.
inline ScenarioReport run_scenario(const Problem& pr, const ExperimentConfig& cfg, const ScenarioOptions& opt) {
    ScenarioReport rep;
    rep.coefficient_set = cfg.coefficient_set;
    rep.stationarity_tol = opt.stationarity_tol;
    const FeedbackLaw law = feedback_law_for(cfg.coefficient_set);
    const ControlPath start = initial_control(cfg, pr);
    rep.feedback = solve_feedback(pr, law, cfg.harvest.beta, start, opt.feedback_tol);
    const ControlPath& u_hat = rep.feedback.control;
    rep.gradient = gradient_via_adjoint(pr, u_hat, {rep.feedback.state}, {rep.feedback.adjoint});
    rep.stationarity = stationarity_residual(pr, u_hat, rep.gradient);

    const SamplingPlan quiet{opt.seed, 1, true, cfg.threads};
    rep.J = evaluate_performance(pr, u_hat, quiet).mean;
    std::mt19937_64 rng(opt.seed ^ 0x5ca1ab1eULL);
    std::vector<ControlPath> perturbed;
    perturbed.reserve(opt.perturbations);
    for (std::size_t k = 0; k < opt.perturbations; ++k) {
        perturbed.push_back(random_perturbation(pr, u_hat, opt.perturbation_fraction, rng));
        PerturbationOutcome o;
        o.index = k;
        o.sup_norm = sup_distance(pr, u_hat, perturbed.back());
        o.gap = rep.J - evaluate_performance(pr, perturbed.back(), quiet).mean;
        o.passed = o.gap >= -1e-12 * std::max(1.0, std::abs(rep.J));
        rep.perturbations.push_back(o);
    }

    rep.sufficiency = check_sufficient_conditions(pr, u_hat, {rep.feedback.state}, {rep.feedback.adjoint},
                                                  opt.sufficiency_samples, opt.seed);

    if (opt.monte_carlo) {
        // The MC optimum differs from the noise-free one whenever the adjoint has martingale
        // parts, so the sampled problem gets its own fixed point.
        const SamplingPlan& plan = *opt.monte_carlo;
        rep.monte_carlo = true;
        const TimePath ubar = control_aggregate(pr, u_hat);
        std::vector<char> undefined(plan_paths(plan), 0);
        parallel_for(undefined.size(), plan.threads, [&](std::size_t s) {
            const auto [run, term] = path_performance(pr, simulate_forward(pr, u_hat, ubar, plan_noise(pr, plan, s)), u_hat, ubar);
            undefined[s] = !std::isfinite(run + term);
        });
        rep.mc_undefined_paths = static_cast<std::size_t>(std::count(undefined.begin(), undefined.end(), 1));
        if (rep.mc_undefined_paths > 0) return rep;
        rep.mc_feedback = solve_feedback(pr, law, cfg.harvest.beta, u_hat, plan, cfg.picard);
        const ControlPath& u_mc = rep.mc_feedback.control;
        rep.mc_stationarity = stationarity_residual(pr, u_mc, plan_gradient(pr, u_mc, plan, cfg.picard));
        rep.mc_performance = evaluate_performance(pr, u_mc, plan);
        std::mt19937_64 mc_rng(opt.seed ^ 0x3c0ffee5ULL);
        for (std::size_t k = 0; k < opt.perturbations; ++k) {
            const ControlPath v = random_perturbation(pr, u_mc, opt.perturbation_fraction, mc_rng);
            const PairedDifference d = paired_performance_difference(pr, u_mc, v, plan);
            PerturbationOutcome o;
            o.index = k;
            o.sup_norm = sup_distance(pr, u_mc, v);
            o.gap = d.mean;
            o.stderr_ = d.stderr_;
            o.passed = d.mean >= -3.0 * d.stderr_;
            rep.mc_perturbations.push_back(o);
        }
    }
    return rep;
}

}  // namespace stic
