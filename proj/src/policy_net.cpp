#include "policy_net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include <zlib.h>

namespace rampmeter {

const std::vector<int>& PolicyParameters::default_sizes() {
  static const std::vector<int> sizes{static_cast<int>(kObsDim), 100, 50, 25, static_cast<int>(kActionDim)};
  return sizes;
}

PolicyParameters PolicyParameters::zeros(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw std::invalid_argument("policy needs at least an input and an output size");
  PolicyParameters p;
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    if (sizes[l] < 1 || sizes[l - 1] < 1) throw std::invalid_argument("policy layer sizes must be positive");
    p.layers.push_back({Eigen::MatrixXd::Zero(sizes[l], sizes[l - 1]), Eigen::VectorXd::Zero(sizes[l])});
  }
  p.log_std = Eigen::VectorXd::Zero(sizes.back());
  return p;
}

PolicyParameters PolicyParameters::glorot(const std::vector<int>& sizes, Rng& rng) {
  PolicyParameters p = zeros(sizes);
  for (auto& layer : p.layers) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.weight.rows() + layer.weight.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = u(rng);
  }
  return p;
}

std::vector<int> PolicyParameters::sizes() const {
  std::vector<int> s{input_dim()};
  for (const auto& l : layers) s.push_back(static_cast<int>(l.weight.rows()));
  return s;
}

std::size_t PolicyParameters::size() const {
  std::size_t n = static_cast<std::size_t>(log_std.size());
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Eigen::VectorXd PolicyParameters::flatten() const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(size()));
  Eigen::Index k = 0;
  for (const auto& l : layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) flat[k++] = l.weight(r, c);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) flat[k++] = l.bias[r];
  }
  for (Eigen::Index r = 0; r < log_std.size(); ++r) flat[k++] = log_std[r];
  return flat;
}

void PolicyParameters::assign(const Eigen::Ref<const Eigen::VectorXd>& flat) {
  if (static_cast<std::size_t>(flat.size()) != size()) throw std::invalid_argument("flat parameter size mismatch");
  Eigen::Index k = 0;
  for (auto& l : layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat[k++];
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = flat[k++];
  }
  for (Eigen::Index r = 0; r < log_std.size(); ++r) log_std[r] = flat[k++];
}

PolicyParameters PolicyParameters::with(const Eigen::Ref<const Eigen::VectorXd>& flat) const {
  PolicyParameters p = *this;
  p.assign(flat);
  return p;
}

void PolicyParameters::validate() const {
  if (layers.empty()) throw std::invalid_argument("policy has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].bias.size() != layers[l].weight.rows()) throw std::invalid_argument("policy bias shape mismatch");
    if (l > 0 && layers[l].weight.cols() != layers[l - 1].weight.rows())
      throw std::invalid_argument("policy layer shapes do not chain");
    if (!layers[l].weight.allFinite() || !layers[l].bias.allFinite())
      throw std::invalid_argument("policy has non-finite weights");
  }
  if (log_std.size() != layers.back().weight.rows()) throw std::invalid_argument("policy log_std shape mismatch");
  if (!log_std.allFinite()) throw std::invalid_argument("policy has non-finite log_std");
}

bool PolicyParameters::bit_equal(const PolicyParameters& o) const {
  if (sizes() != o.sizes()) return false;
  const Eigen::VectorXd a = flatten();
  const Eigen::VectorXd b = o.flatten();
  return std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

ForwardCache forward_batch(const PolicyParameters& p, const Eigen::Ref<const Eigen::MatrixXd>& inputs) {
  if (inputs.rows() != p.input_dim()) throw std::invalid_argument("observation size does not match the policy");
  ForwardCache c;
  c.input = inputs;
  const Eigen::MatrixXd* prev = &c.input;
  const std::size_t n_hidden = p.layers.size() - 1;
  c.hidden.reserve(n_hidden);
  for (std::size_t l = 0; l < n_hidden; ++l) {
    const Layer& layer = p.layers[l];
    Eigen::MatrixXd z = layer.weight * *prev;
    z.colwise() += layer.bias;
    c.hidden.push_back(z.array().tanh().matrix());
    prev = &c.hidden.back();
  }
  c.mean = p.layers.back().weight * *prev;
  c.mean.colwise() += p.layers.back().bias;
  return c;
}

ActionDistribution forward(const PolicyParameters& p, std::span<const double> obs) {
  if (static_cast<Eigen::Index>(obs.size()) != p.input_dim())
    throw std::invalid_argument("observation size does not match the policy");
  for (double x : obs)
    if (!std::isfinite(x)) throw std::invalid_argument("non-finite observation");
  Eigen::Map<const Eigen::VectorXd> x(obs.data(), static_cast<Eigen::Index>(obs.size()));
  ForwardCache c = forward_batch(p, x);
  return {c.mean.col(0), p.log_std.array().exp().matrix()};
}

double log_prob(const PolicyParameters& p, std::span<const double> obs, std::span<const double> action) {
  const ActionDistribution d = forward(p, obs);
  if (static_cast<Eigen::Index>(action.size()) != d.mean.size()) throw std::invalid_argument("action size mismatch");
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double lp = 0.0;
  for (Eigen::Index k = 0; k < d.mean.size(); ++k) {
    const double z = (action[static_cast<std::size_t>(k)] - d.mean[k]) / d.std[k];
    lp += -0.5 * z * z - p.log_std[k] - half_log_2pi;
  }
  return lp;
}

Eigen::VectorXd backprop_mean(const PolicyParameters& p, const ForwardCache& cache,
                              const Eigen::Ref<const Eigen::MatrixXd>& dmean) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.size()));
  // Offsets of each layer block in the flat vector.
  std::vector<Eigen::Index> offset(p.layers.size());
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    offset[l] = k;
    k += p.layers[l].weight.size() + p.layers[l].bias.size();
  }

  Eigen::MatrixXd delta = dmean;  // gradient w.r.t. pre-activation of layer l
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const Layer& layer = p.layers[l];
    const Eigen::MatrixXd& below = l == 0 ? cache.input : cache.hidden[l - 1];
    const Eigen::MatrixXd dw = delta * below.transpose();
    const Eigen::VectorXd db = delta.rowwise().sum();
    Eigen::Index j = offset[l];
    for (Eigen::Index r = 0; r < dw.rows(); ++r)
      for (Eigen::Index c = 0; c < dw.cols(); ++c) grad[j++] = dw(r, c);
    for (Eigen::Index r = 0; r < db.size(); ++r) grad[j++] = db[r];
    if (l > 0) {
      const Eigen::MatrixXd& h = cache.hidden[l - 1];
      delta = ((layer.weight.transpose() * delta).array() * (1.0 - h.array().square())).matrix();
    }
  }
  return grad;
}

Eigen::MatrixXd mean_jvp(const PolicyParameters& p, const ForwardCache& cache,
                         const Eigen::Ref<const Eigen::VectorXd>& v) {
  const PolicyParameters dir = p.with(v);
  const Eigen::Index n = cache.input.cols();
  Eigen::MatrixXd dh = Eigen::MatrixXd::Zero(cache.input.rows(), n);  // input has no tangent
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const Eigen::MatrixXd& below = l == 0 ? cache.input : cache.hidden[l - 1];
    Eigen::MatrixXd dz = dir.layers[l].weight * below;
    if (l > 0) dz.noalias() += p.layers[l].weight * dh;
    dz.colwise() += dir.layers[l].bias;
    if (l + 1 == p.layers.size()) return dz;
    dh = (dz.array() * (1.0 - cache.hidden[l].array().square())).matrix();
  }
  return {};
}

Eigen::VectorXd grad_log_prob(const PolicyParameters& p, std::span<const double> obs,
                              std::span<const double> action) {
  if (static_cast<Eigen::Index>(obs.size()) != p.input_dim())
    throw std::invalid_argument("observation size does not match the policy");
  Eigen::Map<const Eigen::VectorXd> x(obs.data(), static_cast<Eigen::Index>(obs.size()));
  const ForwardCache c = forward_batch(p, x);
  const Eigen::Index out = p.output_dim();
  if (static_cast<Eigen::Index>(action.size()) != out) throw std::invalid_argument("action size mismatch");
  Eigen::MatrixXd dmean(out, 1);
  Eigen::VectorXd dlogstd(out);
  for (Eigen::Index k = 0; k < out; ++k) {
    const double var = std::exp(2.0 * p.log_std[k]);
    const double diff = action[static_cast<std::size_t>(k)] - c.mean(k, 0);
    dmean(k, 0) = diff / var;
    dlogstd[k] = diff * diff / var - 1.0;
  }
  Eigen::VectorXd g = backprop_mean(p, c, dmean);
  g.tail(out) = dlogstd;
  return g;
}

Action sample_action(const PolicyParameters& p, const Observation& obs, Rng& rng) {
  const ActionDistribution d = forward(p, obs);
  std::normal_distribution<double> n(0.0, 1.0);
  Action a{};
  for (std::size_t k = 0; k < kActionDim; ++k) a[k] = d.mean[static_cast<Eigen::Index>(k)] + d.std[static_cast<Eigen::Index>(k)] * n(rng);
  return a;
}

Action mean_action(const PolicyParameters& p, const Observation& obs) {
  const ActionDistribution d = forward(p, obs);
  Action a{};
  for (std::size_t k = 0; k < kActionDim; ++k) a[k] = d.mean[static_cast<Eigen::Index>(k)];
  return a;
}

ActionFn stochastic_policy(const PolicyParameters& p) {
  return [p](const Observation& o, Rng& rng) { return sample_action(p, o, rng); };
}

ActionFn deterministic_policy(const PolicyParameters& p) {
  return [p](const Observation& o, Rng&) { return mean_action(p, o); };
}

// --- serialization ---------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'R', 'N', 'D', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 8;
    const double d = std::bit_cast<double>(v);
    if (!std::isfinite(d)) throw PolicyFormatError(PolicyFormatError::Kind::NonFinite, "policy file: non-finite value");
    return d;
  }
  std::size_t pos() const { return pos_; }
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw PolicyFormatError(PolicyFormatError::Kind::Truncated, "policy file: truncated");
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::vector<std::uint8_t> encode_policy(const PolicyParameters& p) {
  p.validate();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(p.layers.size()));
  for (const auto& l : p.layers) {
    put_u32(out, static_cast<std::uint32_t>(l.weight.rows()));
    put_u32(out, static_cast<std::uint32_t>(l.weight.cols()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) put_f64(out, l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) put_f64(out, l.bias[r]);
  }
  for (Eigen::Index r = 0; r < p.log_std.size(); ++r) put_f64(out, p.log_std[r]);
  put_u32(out, crc_of(out));
  return out;
}

PolicyParameters decode_policy(std::span<const std::uint8_t> bytes) {
  using K = PolicyFormatError::Kind;
  if (bytes.size() < 4) throw PolicyFormatError(K::Truncated, "policy file: truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw PolicyFormatError(K::BadMagic, "policy file: bad magic");
  if (bytes.size() < 8) throw PolicyFormatError(K::Truncated, "policy file: truncated");
  if (bytes.size() >= 12) {
    const auto body = bytes.first(bytes.size() - 4);
    Reader tail(bytes.subspan(bytes.size() - 4));
    const std::uint32_t stored = tail.u32();
    const std::uint32_t actual = crc_of(body);
    Reader r(body);
    r.u32();  // magic
    const std::uint32_t version = r.u32();
    if (version != kVersion)
      throw PolicyFormatError(K::BadVersion, "policy file: unsupported version " + std::to_string(version));
    const std::uint32_t n_layers = r.u32();
    if (n_layers == 0 || n_layers > 64) throw PolicyFormatError(K::ShapeMismatch, "policy file: bad layer count");
    PolicyParameters p;
    for (std::uint32_t l = 0; l < n_layers; ++l) {
      const std::uint32_t rows = r.u32();
      const std::uint32_t cols = r.u32();
      if (rows == 0 || cols == 0 || rows > 1u << 16 || cols > 1u << 16)
        throw PolicyFormatError(K::ShapeMismatch, "policy file: bad layer shape");
      if (l > 0 && cols != static_cast<std::uint32_t>(p.layers.back().weight.rows()))
        throw PolicyFormatError(K::ShapeMismatch, "policy file: layer shapes do not chain");
      r.need(static_cast<std::size_t>(rows) * cols * 8 + static_cast<std::size_t>(rows) * 8);
      Layer layer{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
      for (std::uint32_t i = 0; i < rows; ++i)
        for (std::uint32_t j = 0; j < cols; ++j) layer.weight(i, j) = r.f64();
      for (std::uint32_t i = 0; i < rows; ++i) layer.bias[i] = r.f64();
      p.layers.push_back(std::move(layer));
    }
    const auto out = p.layers.back().weight.rows();
    p.log_std.resize(out);
    for (Eigen::Index i = 0; i < out; ++i) p.log_std[i] = r.f64();
    if (r.pos() != body.size()) throw PolicyFormatError(K::TrailingData, "policy file: unexpected trailing data");
    if (stored != actual) throw PolicyFormatError(K::Checksum, "policy file: checksum mismatch");
    return p;
  }
  throw PolicyFormatError(K::Truncated, "policy file: truncated");
}

void save_policy(const PolicyParameters& p, const std::filesystem::path& path) {
  const auto bytes = encode_policy(p);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw PolicyFormatError(PolicyFormatError::Kind::Io, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw PolicyFormatError(PolicyFormatError::Kind::Io, "write failed for " + path.string());
}

PolicyParameters load_policy(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw PolicyFormatError(PolicyFormatError::Kind::Io, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_policy(bytes);
}

}  // namespace rampmeter
