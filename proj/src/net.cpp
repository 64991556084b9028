#include "uphes/net.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace uphes {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

const double kLogLo = std::log(kWeightLo);
const double kLogHi = std::log(kWeightHi);
const double kAlpha = 4.0 / (kLogHi - kLogLo);

}  // namespace

double bound_transform(double y) {
  return std::exp(kLogLo + (kLogHi - kLogLo) * sigmoid(kAlpha * y));
}

double bound_transform_deriv(double y) {
  const double s = sigmoid(kAlpha * y);
  return bound_transform(y) * (kLogHi - kLogLo) * kAlpha * s * (1.0 - s);
}

void NetParams::validate() const {
  const int H = hidden;
  auto bad = [&](const MatrixXd& m, int r, int c) {
    return m.rows() != r || m.cols() != c || !m.allFinite();
  };
  if (H < 1) throw std::invalid_argument("hidden size must be >= 1");
  for (const auto* m : {&Wi, &Wf, &Wg, &Wo})
    if (bad(*m, H, 4)) throw std::invalid_argument("bad input weight shape");
  for (const auto* m : {&Ui, &Uf, &Ug, &Uo})
    if (bad(*m, H, H)) throw std::invalid_argument("bad recurrent weight shape");
  for (const auto* v : {&bi, &bf, &bg, &bo})
    if (v->size() != H || !v->allFinite())
      throw std::invalid_argument("bad bias shape");
  if (Wy.rows() != 3 || Wy.cols() != H || by.size() != 3)
    throw std::invalid_argument("bad projection shape");
}

int NetParams::parameter_count() const {
  const int H = hidden;
  return 4 * (H * 4 + H * H + H) + 3 * H + 3;
}

VectorXd NetParams::flatten() const {
  VectorXd v(parameter_count());
  int k = 0;
  auto put_m = [&](const MatrixXd& m) {
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) v(k++) = m(i, j);
  };
  auto put_v = [&](const VectorXd& b) {
    for (int i = 0; i < b.size(); ++i) v(k++) = b(i);
  };
  put_m(Wi); put_m(Wf); put_m(Wg); put_m(Wo);
  put_m(Ui); put_m(Uf); put_m(Ug); put_m(Uo);
  put_v(bi); put_v(bf); put_v(bg); put_v(bo);
  put_m(Wy); put_v(by);
  return v;
}

NetParams NetParams::unflatten(const VectorXd& v, int hidden) {
  NetParams p;
  p.hidden = hidden;
  const int H = hidden;
  int k = 0;
  auto get_m = [&](int r, int c) {
    MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = v(k++);
    return m;
  };
  auto get_v = [&](int n) {
    VectorXd b(n);
    for (int i = 0; i < n; ++i) b(i) = v(k++);
    return b;
  };
  p.Wi = get_m(H, 4); p.Wf = get_m(H, 4); p.Wg = get_m(H, 4); p.Wo = get_m(H, 4);
  p.Ui = get_m(H, H); p.Uf = get_m(H, H); p.Ug = get_m(H, H); p.Uo = get_m(H, H);
  p.bi = get_v(H); p.bf = get_v(H); p.bg = get_v(H); p.bo = get_v(H);
  p.Wy = get_m(3, H);
  p.by = get_v(3);
  return p;
}

NetParams init_params(int hidden, std::uint64_t seed) {
  if (hidden < 1) throw std::invalid_argument("hidden size must be >= 1");
  NetParams p;
  p.hidden = hidden;
  const double r = 1.0 / std::sqrt(static_cast<double>(hidden));
  Rng rng(seed);
  auto mat = [&](int rows, int cols) {
    MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-r, r);
    return m;
  };
  p.Wi = mat(hidden, 4); p.Wf = mat(hidden, 4);
  p.Wg = mat(hidden, 4); p.Wo = mat(hidden, 4);
  p.Ui = mat(hidden, hidden); p.Uf = mat(hidden, hidden);
  p.Ug = mat(hidden, hidden); p.Uo = mat(hidden, hidden);
  p.bi = VectorXd::Zero(hidden);
  p.bf = VectorXd::Ones(hidden);  // standard forget-gate bias
  p.bg = VectorXd::Zero(hidden);
  p.bo = VectorXd::Zero(hidden);
  p.Wy = mat(3, hidden);
  // zero projection bias lands initial weights mid-interval on the log scale
  p.by = VectorXd::Zero(3);
  return p;
}

NormConstants norm_constants_from(const UpcModel& m, const PlantConfig& c) {
  NormConstants n;
  n.price_scale = 100.0;
  n.power_scale = std::max(std::abs(envelope_max(m, Mode::Turbine, c.h_max)),
                           std::abs(envelope_min(m, Mode::Pump, c.h_max)));
  double qmax = 0.0;
  for (Mode mode : {Mode::Turbine, Mode::Pump})
    for (int i = 0; i <= 20; ++i) {
      const double h = c.h_min + (c.h_max - c.h_min) * i / 20.0;
      for (double p : {envelope_min(m, mode, h), envelope_max(m, mode, h)})
        qmax = std::max(qmax, std::abs(upc_eval(m, mode, p, h, c)));
    }
  n.flow_scale = qmax;
  n.h_min = c.h_min;
  n.h_max = c.h_max;
  return n;
}

FeatureMatrix assemble_features(const VectorXd& prices, const Trajectory& warm,
                                const NormConstants& norm) {
  const int T = warm.horizon();
  if (prices.size() != T)
    throw std::invalid_argument("price/trajectory horizon mismatch");
  FeatureMatrix f;
  f.X.resize(T, 4);
  for (int t = 0; t < T; ++t) {
    f.X(t, 0) = prices(t) / norm.price_scale;
    f.X(t, 1) = warm.p[t] / norm.power_scale;
    f.X(t, 2) = warm.q[t] / norm.flow_scale;
    f.X(t, 3) = (warm.h[t] - norm.h_min) / (norm.h_max - norm.h_min);
  }
  if (!f.X.allFinite())
    throw std::invalid_argument("non-finite feature matrix");
  return f;
}

PenaltyWeights predict_weights(const NetParams& params,
                               const FeatureMatrix& features, double growth,
                               int iterations, NetForward* cache) {
  params.validate();
  if (!features.X.allFinite())
    throw std::invalid_argument("non-finite feature matrix");
  const int T = features.horizon();
  const int H = params.hidden;

  NetForward local;
  NetForward& fw = cache ? *cache : local;
  fw.x = features.X;
  fw.gi.resize(T, H); fw.gf.resize(T, H); fw.gg.resize(T, H);
  fw.go.resize(T, H); fw.cell.resize(T, H); fw.hidden.resize(T, H);
  fw.tanh_c.resize(T, H);
  fw.y.resize(T, 3);
  fw.w.resize(T, 3);

  VectorXd h_prev = VectorXd::Zero(H);
  VectorXd c_prev = VectorXd::Zero(H);
  for (int t = 0; t < T; ++t) {
    const VectorXd xt = features.X.row(t).transpose();
    const VectorXd ai = params.Wi * xt + params.Ui * h_prev + params.bi;
    const VectorXd af = params.Wf * xt + params.Uf * h_prev + params.bf;
    const VectorXd ag = params.Wg * xt + params.Ug * h_prev + params.bg;
    const VectorXd ao = params.Wo * xt + params.Uo * h_prev + params.bo;
    for (int j = 0; j < H; ++j) {
      fw.gi(t, j) = sigmoid(ai(j));
      fw.gf(t, j) = sigmoid(af(j));
      fw.gg(t, j) = std::tanh(ag(j));
      fw.go(t, j) = sigmoid(ao(j));
      fw.cell(t, j) = fw.gf(t, j) * c_prev(j) + fw.gi(t, j) * fw.gg(t, j);
      fw.tanh_c(t, j) = std::tanh(fw.cell(t, j));
      fw.hidden(t, j) = fw.go(t, j) * fw.tanh_c(t, j);
    }
    const VectorXd yt = params.Wy * fw.hidden.row(t).transpose() + params.by;
    fw.y.row(t) = yt.transpose();
    for (int k = 0; k < 3; ++k) fw.w(t, k) = bound_transform(yt(k));
    h_prev = fw.hidden.row(t).transpose();
    c_prev = fw.cell.row(t).transpose();
  }

  PenaltyWeights w;
  w.w_p.resize(T);
  w.w_q.resize(T);
  w.w_h.resize(T);
  for (int t = 0; t < T; ++t) {
    w.w_p(t) = fw.w(t, 0);
    w.w_q(t) = fw.w(t, 1);
    w.w_h(t) = fw.w(t, 2);
  }
  w.growth = growth;
  w.iterations = iterations;
  return w;
}

NetParams net_backward(const NetParams& params, const NetForward& cache,
                       const MatrixXd& dL_dw) {
  const int T = static_cast<int>(cache.x.rows());
  const int H = params.hidden;
  if (cache.y.rows() != T || T == 0)
    throw std::invalid_argument("forward cache missing or stale");
  if (dL_dw.rows() != T || dL_dw.cols() != 3)
    throw std::invalid_argument("upstream gradient must be T x 3");

  NetParams g =
      NetParams::unflatten(VectorXd::Zero(params.parameter_count()), H);

  MatrixXd dh = MatrixXd::Zero(T, H);
  for (int t = 0; t < T; ++t) {
    VectorXd dy(3);
    for (int k = 0; k < 3; ++k)
      dy(k) = dL_dw(t, k) * bound_transform_deriv(cache.y(t, k));
    g.Wy += dy * cache.hidden.row(t);
    g.by += dy;
    dh.row(t) += (params.Wy.transpose() * dy).transpose();
  }

  VectorXd dc_next = VectorXd::Zero(H);
  VectorXd dh_next = VectorXd::Zero(H);
  for (int t = T - 1; t >= 0; --t) {
    const VectorXd dht = dh.row(t).transpose() + dh_next;
    VectorXd dct = dc_next;
    VectorXd dai(H), daf(H), dag(H), dao(H);
    const VectorXd c_prev = (t > 0)
                                ? VectorXd(cache.cell.row(t - 1).transpose())
                                : VectorXd(VectorXd::Zero(H));
    for (int j = 0; j < H; ++j) {
      const double go = cache.go(t, j);
      const double tc = cache.tanh_c(t, j);
      dct(j) += dht(j) * go * (1.0 - tc * tc);
      const double di = dct(j) * cache.gg(t, j);
      const double df = dct(j) * c_prev(j);
      const double dgg = dct(j) * cache.gi(t, j);
      const double dgo = dht(j) * tc;
      dai(j) = di * cache.gi(t, j) * (1.0 - cache.gi(t, j));
      daf(j) = df * cache.gf(t, j) * (1.0 - cache.gf(t, j));
      dag(j) = dgg * (1.0 - cache.gg(t, j) * cache.gg(t, j));
      dao(j) = dgo * go * (1.0 - go);
    }
    const Eigen::RowVectorXd xt = cache.x.row(t);
    g.Wi += dai * xt; g.Wf += daf * xt; g.Wg += dag * xt; g.Wo += dao * xt;
    if (t > 0) {
      const Eigen::RowVectorXd hprev = cache.hidden.row(t - 1);
      g.Ui += dai * hprev; g.Uf += daf * hprev;
      g.Ug += dag * hprev; g.Uo += dao * hprev;
    }
    g.bi += dai; g.bf += daf; g.bg += dag; g.bo += dao;
    dh_next = params.Ui.transpose() * dai + params.Uf.transpose() * daf +
              params.Ug.transpose() * dag + params.Uo.transpose() * dao;
    for (int j = 0; j < H; ++j) dc_next(j) = dct(j) * cache.gf(t, j);
  }
  return g;
}

double clip_gradient(VectorXd& g, double max_norm) {
  const double n = g.norm();
  if (n > max_norm && n > 0.0) g *= max_norm / n;
  return n;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  nlohmann::json j;
  j["schema"] = 1;
  j["hidden"] = ck.params.hidden;
  j["w_lo"] = ck.w_lo;
  j["w_hi"] = ck.w_hi;
  j["growth"] = ck.growth;
  j["iterations"] = ck.iterations;
  j["norm"] = {{"price_scale", ck.norm.price_scale},
               {"power_scale", ck.norm.power_scale},
               {"flow_scale", ck.norm.flow_scale},
               {"h_min", ck.norm.h_min},
               {"h_max", ck.norm.h_max}};
  const VectorXd v = ck.params.flatten();
  j["params"] = std::vector<double>(v.data(), v.data() + v.size());
  std::ofstream out(path);
  if (!out) throw io_error("cannot write checkpoint " + path);
  out << j.dump() << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open checkpoint " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("schema", 0) != 1)
    throw std::invalid_argument("unsupported checkpoint schema in " + path);
  Checkpoint ck;
  const int H = j.at("hidden").get<int>();
  ck.w_lo = j.at("w_lo").get<double>();
  ck.w_hi = j.at("w_hi").get<double>();
  ck.growth = j.at("growth").get<double>();
  ck.iterations = j.at("iterations").get<int>();
  ck.norm.price_scale = j.at("norm").at("price_scale").get<double>();
  ck.norm.power_scale = j.at("norm").at("power_scale").get<double>();
  ck.norm.flow_scale = j.at("norm").at("flow_scale").get<double>();
  ck.norm.h_min = j.at("norm").at("h_min").get<double>();
  ck.norm.h_max = j.at("norm").at("h_max").get<double>();
  const auto v = j.at("params").get<std::vector<double>>();
  ck.params =
      NetParams::unflatten(Eigen::Map<const VectorXd>(v.data(), v.size()), H);
  return ck;
}

}  // namespace uphes
