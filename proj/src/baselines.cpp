#include "kmeflow/baselines.hpp"

#include "kmeflow/error.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace kmeflow {

GaussianObservationModel::GaussianObservationModel(Eigen::MatrixXd H, Eigen::MatrixXd R, Eigen::VectorXd beta)
    : H_(std::move(H)), R_(std::move(R)), beta_(std::move(beta)) {
    if (R_.rows() != R_.cols() || R_.rows() != H_.rows() || beta_.size() != H_.rows()) {
        throw std::invalid_argument("observation model shapes are inconsistent: H is " + std::to_string(H_.rows()) +
                                    "x" + std::to_string(H_.cols()) + ", R is " + std::to_string(R_.rows()) + "x" +
                                    std::to_string(R_.cols()) + ", beta has " + std::to_string(beta_.size()));
    }
    if ((R_ - R_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + R_.cwiseAbs().maxCoeff())) {
        throw std::invalid_argument("observation noise covariance R must be symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(R_);
    if (llt.info() != Eigen::Success || !(llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0)) {
        throw std::invalid_argument("observation noise covariance R must be positive definite");
    }
    R_chol_ = llt.matrixL();
    R_inv_ = llt.solve(Eigen::MatrixXd::Identity(R_.rows(), R_.cols()));
    R_inv_ = 0.5 * (R_inv_ + R_inv_.transpose()).eval();
}

GaussianObservationModel GaussianObservationModel::with_observation(Eigen::VectorXd beta) const {
    if (beta.size() != beta_.size()) throw std::invalid_argument("observation has the wrong dimension");
    GaussianObservationModel copy = *this;
    copy.beta_ = std::move(beta);
    return copy;
}

double nll(const GaussianObservationModel& model, const Eigen::VectorXd& x) {
    if (x.size() != model.state_dim()) throw std::invalid_argument("nll: state has the wrong dimension");
    const Eigen::VectorXd r = model.H() * x - model.beta();
    return 0.5 * r.dot(model.R_inverse() * r);
}

Eigen::VectorXd kalman_bucy_velocity(const GaussianObservationModel& model, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
    const Eigen::VectorXd innovation = model.H() * (x + mean) - 2.0 * model.beta();
    return -0.5 * (cov * (model.H().transpose() * (model.R_inverse() * innovation)));
}

Eigen::MatrixXd kalman_bucy_velocities(const GaussianObservationModel& model, const Eigen::MatrixXd& positions,
                                       const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
    // Rows: v_i^T = -1/2 (H (x_i + m) - 2 beta)^T R^{-1} H cov.
    const Eigen::MatrixXd gain = model.R_inverse() * model.H() * cov;  // d' x d
    Eigen::MatrixXd innovations = (positions.rowwise() + mean.transpose()) * model.H().transpose();
    innovations.rowwise() -= 2.0 * model.beta().transpose();
    return -0.5 * innovations * gain;
}

Ensemble run_kalman_bucy_flow(const Eigen::MatrixXd& prior_samples, const GaussianObservationModel& model,
                              int n_steps) {
    if (n_steps < 1) throw std::invalid_argument("run_kalman_bucy_flow: n_steps must be >= 1");
    if (prior_samples.rows() < 2) throw DegenerateEnsembleError("Kalman-Bucy flow needs at least 2 particles");
    Ensemble e{prior_samples, 0.0};
    const double dt = 1.0 / n_steps;
    for (int step = 0; step < n_steps; ++step) {
        const Eigen::VectorXd mean = ensemble_mean(e.positions);
        const Eigen::MatrixXd cov = ensemble_covariance(e.positions);
        const Eigen::MatrixXd v = kalman_bucy_velocities(model, e.positions, mean, cov);
        e.positions += dt * v;
        e.time = (step + 1) * dt;
        if (!e.all_finite()) {
            throw DivergenceError("Kalman-Bucy flow produced non-finite positions at step " + std::to_string(step),
                                  step, 0.0);
        }
    }
    return e;
}

Ensemble enkf_analysis(const Ensemble& forecast, const GaussianObservationModel& model, SeededRng& rng) {
    const Eigen::Index n = forecast.size();
    if (n < 2) throw DegenerateEnsembleError("EnKF analysis needs at least 2 particles");
    if (forecast.dim() != model.state_dim()) throw std::invalid_argument("EnKF: ensemble has the wrong dimension");
    const Eigen::MatrixXd cov = ensemble_covariance(forecast.positions);
    const Eigen::MatrixXd hc = model.H() * cov;                           // d' x d
    const Eigen::MatrixXd s = hc * model.H().transpose() + model.R();     // d' x d'
    // S Y = H C  =>  K = Y^T = C H^T S^{-1}.
    const Eigen::MatrixXd gain = s.llt().solve(hc).transpose();           // d x d'

    // Perturbations are drawn serially in particle order.
    const Eigen::MatrixXd eta = normal_draws(rng, n, model.obs_dim()) * model.R_chol_.transpose();
    Eigen::MatrixXd innovations = (-forecast.positions * model.H().transpose() + eta).eval();
    innovations.rowwise() += model.beta().transpose();
    Ensemble out = forecast;
    out.positions += innovations * gain.transpose();
    return out;
}

}  // namespace kmeflow
