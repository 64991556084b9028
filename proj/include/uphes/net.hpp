#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

#include "uphes/plant.hpp"
#include "uphes/qp.hpp"

namespace uphes {

// Recurrent penalty predictor: a single LSTM layer over the hourly feature
// sequence with a shared linear projection to the three log-domain weights.
struct NetParams {
  int hidden = 32;
  Eigen::MatrixXd Wi, Wf, Wg, Wo;  // input weights, H x 4
  Eigen::MatrixXd Ui, Uf, Ug, Uo;  // recurrent weights, H x H
  Eigen::VectorXd bi, bf, bg, bo;  // gate biases, H
  Eigen::MatrixXd Wy;              // output projection, 3 x H
  Eigen::VectorXd by;              // 3

  void validate() const;
  Eigen::VectorXd flatten() const;
  static NetParams unflatten(const Eigen::VectorXd& v, int hidden);
  int parameter_count() const;
};

NetParams init_params(int hidden, std::uint64_t seed);

// fixed per-column normalization constants, stored with the checkpoint
struct NormConstants {
  double price_scale = 100.0;
  double power_scale = 1.0;
  double flow_scale = 1.0;
  double h_min = 0.0;
  double h_max = 1.0;
};

NormConstants norm_constants_from(const UpcModel& m, const PlantConfig& c);

// rows [lambda_t, p_t, q_t, h_t] after normalization
struct FeatureMatrix {
  Eigen::MatrixXd X;  // T x 4
  int horizon() const { return static_cast<int>(X.rows()); }
};

FeatureMatrix assemble_features(const Eigen::VectorXd& prices,
                                const Trajectory& warm,
                                const NormConstants& norm);

// forward cache for backpropagation through time
struct NetForward {
  Eigen::MatrixXd x;                     // T x 4
  Eigen::MatrixXd gi, gf, gg, go;        // gate activations, T x H
  Eigen::MatrixXd cell, hidden, tanh_c;  // T x H
  Eigen::MatrixXd y;                     // pre-transform outputs, T x 3
  Eigen::MatrixXd w;                     // bounded weights, T x 3
};

// Smooth bound transform: log w = L + (U - L) * sigmoid(alpha * y) with
// alpha = 4 / (U - L), so w(0) is the geometric midpoint of the interval
// and the map matches exp(y) to first order there. Strictly inside
// (w_lo, w_hi) for every y.
double bound_transform(double y);
double bound_transform_deriv(double y);  // dw/dy

PenaltyWeights predict_weights(const NetParams& params,
                               const FeatureMatrix& features, double growth,
                               int iterations, NetForward* cache = nullptr);

// exact reverse-mode gradient of sum_t dL_dw(t, :) . w_t with respect to
// the parameters; dL_dw columns ordered (w_p, w_q, w_h)
NetParams net_backward(const NetParams& params, const NetForward& cache,
                       const Eigen::MatrixXd& dL_dw);

// rescales g in place to norm <= max_norm; returns the pre-clip norm
double clip_gradient(Eigen::VectorXd& g, double max_norm);

// versioned JSON checkpoint with exact round-trip
struct Checkpoint {
  NetParams params;
  NormConstants norm;
  double w_lo = kWeightLo;
  double w_hi = kWeightHi;
  double growth = 2.0;
  int iterations = 3;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace uphes
