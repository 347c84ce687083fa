#pragma once

/**
 * @file
 * @brief Neural value function V(x, tau) = l(x) + tau * Pi(z) with analytic derivatives.
 *
 * Pi is a fully connected network with sine activations (SIREN-style
 * initialization) acting on normalized inputs z = (scaled state, scaled tau)
 * in [-1, 1]. Input derivatives are propagated forward alongside the values
 * (one tangent per input), and parameter gradients of the variational
 * inequality residual loss are obtained by a reverse sweep through both.
 *
 * The residual in time-to-go form is
 *   r = min( l - V, -dV/dtau + H(x, grad_x V) + gamma V ),
 *   H(x, p) = p'f(x) + max_u p'g(x)u.
 */

#include <Eigen/Core>

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "system_model.hpp"
#include "value_types.hpp"

namespace pmpsafe {

struct NetArchitecture
{
  std::vector<int> hidden{64, 64};
  /// frequency scale of the first layer
  double omega0{1.0};
};

/// Everything needed to evaluate the ansatz besides the weights.
struct NetNormalization
{
  Vec lo;
  Vec hi;
  double horizon{1.0};
};

/// Per-batch forward results and the intermediate values the reverse sweep needs.
struct NetTape
{
  Mat z;                                  // d_in x B
  std::vector<Mat> pre;                   // per hidden layer, width x B
  std::vector<Mat> act;                   // per hidden layer
  std::vector<std::vector<Mat>> dpre;     // [layer][input] tangents of pre-activations
  std::vector<std::vector<Mat>> dact;     // [layer][input]
  Eigen::RowVectorXd pi;                  // 1 x B
  Mat dpi;                                // d_in x B, dPi/dz
};

struct BatchValues
{
  Eigen::RowVectorXd value;  // V
  Mat grad_x;                // n x B
  Eigen::RowVectorXd dV_dtau;
  Eigen::RowVectorXd l;
  NetTape tape;
};

class ValueNet
{
public:
  ValueNet() = default;

  ValueNet(const SystemModel & sys, NetArchitecture arch, NetNormalization norm, std::uint64_t seed)
      : arch_(std::move(arch)), norm_(std::move(norm)), system_id_(sys.name), h_(sys.h), grad_h_(sys.grad_h)
  {
    if (norm_.lo.size() != sys.state_dim || norm_.hi.size() != sys.state_dim || (norm_.hi - norm_.lo).minCoeff() <= 0) {
      throw ConfigError("ValueNet: normalization box must match the state dimension");
    }
    if (!(norm_.horizon > 0)) throw ConfigError("ValueNet: horizon must be positive");
    if (arch_.hidden.empty()) throw ConfigError("ValueNet: at least one hidden layer");
    for (int w : arch_.hidden) {
      if (w <= 0) throw ConfigError("ValueNet: hidden widths must be positive");
    }
    layout();
    initialize(seed);
  }

  int input_dim() const { return static_cast<int>(norm_.lo.size()) + 1; }
  int state_dim() const { return static_cast<int>(norm_.lo.size()); }
  std::size_t num_params() const { return params_.size(); }
  const std::vector<double> & params() const { return params_; }
  std::vector<double> & params() { return params_; }
  void set_params(const std::vector<double> & p)
  {
    if (p.size() != params_.size()) throw ConfigError("ValueNet: parameter count mismatch");
    params_ = p;
  }
  const NetArchitecture & architecture() const { return arch_; }
  const NetNormalization & normalization() const { return norm_; }
  double horizon() const { return norm_.horizon; }
  const std::string & system_id() const { return system_id_; }

  /// Re-attach the constraint function (after loading a model file).
  void attach(const SystemModel & sys)
  {
    if (sys.state_dim != state_dim()) throw ConfigError("ValueNet: system state dimension differs from the model");
    h_ = sys.h;
    grad_h_ = sys.grad_h;
  }

  /// Evaluate a batch: X is n x B (physical states), tau has B entries.
  BatchValues evaluate(const Mat & X, const Eigen::RowVectorXd & tau) const
  {
    const Eigen::Index B = X.cols(), n = X.rows();
    if (n != state_dim() || tau.size() != B) throw ConfigError("ValueNet: batch shape mismatch");
    BatchValues out;
    NetTape & t = out.tape;
    const int d = input_dim();
    t.z.resize(d, B);
    const Vec scale = 2.0 * (norm_.hi - norm_.lo).cwiseInverse();
    for (Eigen::Index b = 0; b < B; ++b) {
      t.z.col(b).head(n) = (X.col(b) - norm_.lo).cwiseProduct(scale) - Vec::Ones(n);
      t.z(n, b) = 2.0 * tau[b] / norm_.horizon - 1.0;
    }

    const std::size_t L = arch_.hidden.size();
    t.pre.resize(L);
    t.act.resize(L);
    t.dpre.assign(L, std::vector<Mat>(static_cast<std::size_t>(d)));
    t.dact.assign(L, std::vector<Mat>(static_cast<std::size_t>(d)));
    for (std::size_t l = 0; l < L; ++l) {
      const auto W = weight(l);
      const auto bias = this->bias(l);
      const Mat & in = l == 0 ? t.z : t.act[l - 1];
      t.pre[l] = (W * in).colwise() + bias;
      const Mat c = t.pre[l].array().cos().matrix();
      t.act[l] = t.pre[l].array().sin().matrix();
      for (int k = 0; k < d; ++k) {
        auto & dp = t.dpre[l][static_cast<std::size_t>(k)];
        if (l == 0) {
          dp = W.col(k).replicate(1, B);
        } else {
          dp = W * t.dact[l - 1][static_cast<std::size_t>(k)];
        }
        t.dact[l][static_cast<std::size_t>(k)] = c.cwiseProduct(dp);
      }
    }
    const auto wo = weight(L);
    const double bo = bias(L)[0];
    t.pi = (wo * t.act[L - 1]).array() + bo;
    t.dpi.resize(d, B);
    for (int k = 0; k < d; ++k) t.dpi.row(k) = wo * t.dact[L - 1][static_cast<std::size_t>(k)];

    out.value.resize(B);
    out.dV_dtau.resize(B);
    out.l.resize(B);
    out.grad_x.resize(n, B);
    for (Eigen::Index b = 0; b < B; ++b) {
      const Vec x = X.col(b);
      const double l = h_(x);
      out.l[b] = l;
      out.value[b] = l + tau[b] * t.pi[b];
      out.grad_x.col(b) = grad_h_(x) + tau[b] * t.dpi.col(b).head(n).cwiseProduct(scale);
      out.dV_dtau[b] = t.pi[b] + tau[b] * t.dpi(n, b) * 2.0 / norm_.horizon;
    }
    return out;
  }

  /**
   * @brief Parameter gradient of sum_b (gPi_b * Pi_b + sum_k gD_kb * dPi/dz_k,b).
   *
   * Reverse sweep through the forward values and their input tangents.
   */
  std::vector<double> backward(const NetTape & t, const Eigen::RowVectorXd & gPi, const Mat & gD) const
  {
    const std::size_t L = arch_.hidden.size();
    const int d = input_dim();
    std::vector<double> grad(params_.size(), 0.0);

    const auto wo = weight(L);
    // output layer
    {
      auto gW = weight_grad(grad, L);
      gW += gPi * t.act[L - 1].transpose();
      for (int k = 0; k < d; ++k) gW += gD.row(k) * t.dact[L - 1][static_cast<std::size_t>(k)].transpose();
      bias_grad(grad, L)[0] += gPi.sum();
    }
    Mat abar = wo.transpose() * gPi;  // width x B
    std::vector<Mat> dabar(static_cast<std::size_t>(d));
    for (int k = 0; k < d; ++k) dabar[static_cast<std::size_t>(k)] = wo.transpose() * gD.row(k);

    for (std::size_t l = L; l-- > 0;) {
      const Mat c = t.pre[l].array().cos().matrix();
      const Mat s = t.act[l];
      Mat sbar = abar.cwiseProduct(c);
      std::vector<Mat> dsbar(static_cast<std::size_t>(d));
      for (int k = 0; k < d; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        sbar -= dabar[kk].cwiseProduct(s).cwiseProduct(t.dpre[l][kk]);
        dsbar[kk] = dabar[kk].cwiseProduct(c);
      }
      const auto W = weight(l);
      auto gW = weight_grad(grad, l);
      auto gb = bias_grad(grad, l);
      gb += sbar.rowwise().sum();
      if (l == 0) {
        gW += sbar * t.z.transpose();
        for (int k = 0; k < d; ++k) gW.col(k) += dsbar[static_cast<std::size_t>(k)].rowwise().sum();
      } else {
        gW += sbar * t.act[l - 1].transpose();
        for (int k = 0; k < d; ++k) {
          gW += dsbar[static_cast<std::size_t>(k)] * t.dact[l - 1][static_cast<std::size_t>(k)].transpose();
        }
        abar = W.transpose() * sbar;
        for (int k = 0; k < d; ++k) dabar[static_cast<std::size_t>(k)] = W.transpose() * dsbar[static_cast<std::size_t>(k)];
      }
    }
    return grad;
  }

  /// Parameter offsets: layer l has weights (out x in, column-major) followed by biases.
  struct LayerSlot
  {
    std::size_t w_offset, b_offset;
    int rows, cols;
  };
  const std::vector<LayerSlot> & slots() const { return slots_; }

private:
  void layout()
  {
    slots_.clear();
    std::size_t off = 0;
    int in = input_dim();
    std::vector<int> outs = arch_.hidden;
    outs.push_back(1);
    for (int out : outs) {
      LayerSlot s{off, off + static_cast<std::size_t>(out * in), out, in};
      off = s.b_offset + static_cast<std::size_t>(out);
      slots_.push_back(s);
      in = out;
    }
    params_.assign(off, 0.0);
  }

  void initialize(std::uint64_t seed)
  {
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < slots_.size(); ++l) {
      const auto & s = slots_[l];
      const double fan_in = s.cols;
      double wb;
      if (l == 0) {
        wb = arch_.omega0 / fan_in;
      } else if (l + 1 == slots_.size()) {
        wb = 0.1 * std::sqrt(6.0 / fan_in);
      } else {
        wb = std::sqrt(6.0 / fan_in);
      }
      std::uniform_real_distribution<double> dw(-wb, wb);
      for (std::size_t i = 0; i < static_cast<std::size_t>(s.rows * s.cols); ++i) params_[s.w_offset + i] = dw(rng);
      const double bb = l == 0 ? 1.0 : 1.0 / std::sqrt(fan_in);
      std::uniform_real_distribution<double> db(-bb, bb);
      for (std::size_t i = 0; i < static_cast<std::size_t>(s.rows); ++i) {
        params_[s.b_offset + i] = l + 1 == slots_.size() ? 0.0 : db(rng);
      }
    }
  }

  Eigen::Map<const Mat> weight(std::size_t l) const
  {
    const auto & s = slots_[l];
    return {params_.data() + s.w_offset, s.rows, s.cols};
  }
  Eigen::Map<const Vec> bias(std::size_t l) const
  {
    const auto & s = slots_[l];
    return {params_.data() + s.b_offset, s.rows};
  }
  Eigen::Map<Mat> weight_grad(std::vector<double> & g, std::size_t l) const
  {
    const auto & s = slots_[l];
    return {g.data() + s.w_offset, s.rows, s.cols};
  }
  Eigen::Map<Vec> bias_grad(std::vector<double> & g, std::size_t l) const
  {
    const auto & s = slots_[l];
    return {g.data() + s.b_offset, s.rows};
  }

  NetArchitecture arch_;
  NetNormalization norm_;
  std::string system_id_;
  std::function<double(const Vec &)> h_;
  std::function<Vec(const Vec &)> grad_h_;
  std::vector<double> params_;
  std::vector<LayerSlot> slots_;

  friend nlohmann::json model_to_json(const ValueNet &, const nlohmann::json &);
  friend ValueNet model_from_json(const nlohmann::json &, const SystemModel &);
};

/// Value, spatial gradient and tau-derivative at a single point.
inline ValueAndGradients forward_with_gradients(const ValueNet & net, const Vec & x, double tau)
{
  Eigen::RowVectorXd t(1);
  t[0] = tau;
  const auto b = net.evaluate(x, t);
  return {b.value[0], b.grad_x.col(0), b.dV_dtau[0]};
}

/// Hamiltonian max_u grad' (f + g u) and the maximizing velocity f + g u*.
inline std::pair<double, Vec> optimal_hamiltonian(const SystemModel & sys, const Vec & x, const Vec & grad)
{
  const Mat G = sys.g(x);
  const Vec v = G.transpose() * grad;
  const Vec u = sys.control_set.kind == ControlSet::Kind::Ball && v.norm() <= 1e-12
                    ? Vec(sys.control_set.center)
                    : closed_form_maximizer(v, sys.control_set);
  const Vec vel = sys.f(x) + G * u;
  return {grad.dot(vel), vel};
}

/// Signed residual min(l - V, -dV/dtau + H + gamma V) at one point.
inline double vi_residual_signed(const SystemModel & sys, const Vec & x, double l, const ValueAndGradients & v,
                                 double gamma)
{
  const double H = optimal_hamiltonian(sys, x, v.grad_x).first;
  return std::min(l - v.value, -v.dV_dtau + H + gamma * v.value);
}

/// |min(l - V, -dV/dtau + H + gamma V)|; zero exactly where the variational inequality holds.
inline double vi_residual(const ValueNet & net, const SystemModel & sys, const Vec & x, double tau, double gamma)
{
  return std::abs(vi_residual_signed(sys, x, sys.h(x), forward_with_gradients(net, x, tau), gamma));
}

/// Mean |residual| over a batch and its gradient with respect to the parameters.
struct LossResult
{
  double loss{0};
  std::vector<double> grad;
};

inline LossResult residual_loss(const ValueNet & net, const SystemModel & sys, const Mat & X,
                                const Eigen::RowVectorXd & tau, double gamma, bool with_gradient = true)
{
  const auto bv = net.evaluate(X, tau);
  const Eigen::Index B = X.cols(), n = X.rows();
  const int d = net.input_dim();
  const auto & norm = net.normalization();
  const Vec scale = 2.0 * (norm.hi - norm.lo).cwiseInverse();
  Eigen::RowVectorXd gPi = Eigen::RowVectorXd::Zero(B);
  Mat gD = Mat::Zero(d, B);
  double sum = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const Vec x = X.col(b);
    const auto [H, vel] = optimal_hamiltonian(sys, x, bv.grad_x.col(b));
    const double first = bv.l[b] - bv.value[b];
    const double second = -bv.dV_dtau[b] + H + gamma * bv.value[b];
    const double r = std::min(first, second);
    sum += std::abs(r);
    if (!with_gradient || r == 0.0) continue;
    const double w = (r > 0 ? 1.0 : -1.0) / static_cast<double>(B);
    const double tb = tau[b];
    if (first <= second) {
      gPi[b] = -w * tb;
    } else {
      gPi[b] = w * (-1.0 + gamma * tb);
      gD.col(b).head(n) = w * tb * vel.cwiseProduct(scale);
      gD(n, b) = -w * tb * 2.0 / norm.horizon;
    }
  }
  LossResult res;
  res.loss = sum / static_cast<double>(B);
  if (with_gradient) res.grad = net.backward(bv.tape, gPi, gD);
  return res;
}

// ---------------------------------------------------------------------------------------------
// Model file: JSON header plus base64 payload of little-endian doubles.

inline constexpr int kModelSchemaVersion = 1;

namespace detail {

inline std::string encode_doubles(const std::vector<double> & v)
{
  using namespace boost::archive::iterators;
  std::string bytes;
  bytes.reserve(v.size() * 8);
  for (double d : v) {
    const auto u = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((u >> (8 * i)) & 0xffu));
  }
  using It = base64_from_binary<transform_width<std::string::const_iterator, 6, 8>>;
  std::string out(It(bytes.begin()), It(bytes.end()));
  out.append((3 - bytes.size() % 3) % 3, '=');
  return out;
}

inline std::vector<double> decode_doubles(std::string s, std::size_t count)
{
  using namespace boost::archive::iterators;
  while (!s.empty() && s.back() == '=') s.pop_back();
  using It = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
  std::string bytes;
  try {
    bytes.assign(It(s.begin()), It(s.end()));
  } catch (const std::exception & e) {
    throw ConfigError(std::string("model file: bad weight payload: ") + e.what());
  }
  if (bytes.size() < count * 8) throw ConfigError("model file: weight payload too short");
  std::vector<double> v(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::uint64_t u = 0;
    for (int i = 7; i >= 0; --i) u = (u << 8) | static_cast<unsigned char>(bytes[k * 8 + static_cast<std::size_t>(i)]);
    v[k] = std::bit_cast<double>(u);
  }
  return v;
}

inline std::vector<double> to_std(const Vec & v) { return {v.data(), v.data() + v.size()}; }
inline Vec from_std(const std::vector<double> & v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

}  // namespace detail

inline nlohmann::json model_to_json(const ValueNet & net, const nlohmann::json & provenance = nlohmann::json::object())
{
  return {{"schema_version", kModelSchemaVersion},
          {"system_id", net.system_id_},
          {"architecture", {{"hidden", net.arch_.hidden}, {"omega0", net.arch_.omega0}, {"activation", "sine"}}},
          {"normalization",
           {{"lo", detail::to_std(net.norm_.lo)}, {"hi", detail::to_std(net.norm_.hi)}, {"horizon", net.norm_.horizon}}},
          {"provenance", provenance},
          {"num_params", net.params_.size()},
          {"weights", detail::encode_doubles(net.params_)}};
}

inline ValueNet model_from_json(const nlohmann::json & j, const SystemModel & sys)
{
  const int version = j.value("schema_version", -1);
  if (version != kModelSchemaVersion) throw VersionError("model file: unsupported schema_version " + std::to_string(version));
  try {
    NetArchitecture arch;
    arch.hidden = j.at("architecture").at("hidden").get<std::vector<int>>();
    arch.omega0 = j.at("architecture").at("omega0").get<double>();
    NetNormalization norm;
    norm.lo = detail::from_std(j.at("normalization").at("lo").get<std::vector<double>>());
    norm.hi = detail::from_std(j.at("normalization").at("hi").get<std::vector<double>>());
    norm.horizon = j.at("normalization").at("horizon").get<double>();
    const auto id = j.at("system_id").get<std::string>();
    if (id != sys.name) throw ConfigError("model file: trained for system '" + id + "', not '" + sys.name + "'");
    ValueNet net(sys, arch, norm, 0);
    const auto count = j.at("num_params").get<std::size_t>();
    if (count != net.num_params()) throw ConfigError("model file: parameter count does not match the architecture");
    net.params_ = detail::decode_doubles(j.at("weights").get<std::string>(), count);
    return net;
  } catch (const nlohmann::json::exception & e) {
    throw ConfigError(std::string("model file: ") + e.what());
  }
}

inline void save_model(const ValueNet & net, const std::string & path,
                       const nlohmann::json & provenance = nlohmann::json::object())
{
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << model_to_json(net, provenance).dump(2) << '\n';
}

inline ValueNet load_model(const std::string & path, const SystemModel & sys)
{
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception & e) {
    throw ConfigError("model file " + path + ": " + e.what());
  }
  return model_from_json(j, sys);
}

/// FNV-1a over the little-endian bytes of the parameters.
inline std::uint64_t weights_checksum(const std::vector<double> & p)
{
  std::uint64_t h = 1469598103934665603ull;
  for (double d : p) {
    const auto u = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) {
      h ^= (u >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace pmpsafe
