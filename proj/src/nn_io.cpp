#include <algorithm>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "fedbalance/errors.hpp"
#include "fedbalance/nn.hpp"

// Binary snapshot layout, all integers and doubles little-endian:
//   u32 magic 'FBML'  u32 version  u32 layer_count
//   per layer: u32 out  u32 in  u8 activation
//              f64[out*in] weights (row-major)  f64[out] bias

namespace fedbalance {
namespace {

constexpr std::uint32_t kMagic = 0x4c4d4246;  // "FBML"
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  unsigned char buf[sizeof(T)];
  auto offset = static_cast<long long>(in.tellg());
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw ParseError(std::string("model snapshot truncated reading ") + what +
                     " at offset " + std::to_string(offset));
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void save_binary(const MlpModel& model, std::ostream& out) {
  put_le<std::uint32_t>(out, kMagic);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& l : model.layers) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.out_dim()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.in_dim()));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(l.activation));
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) put_le<double>(out, l.weights(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) put_le<double>(out, l.bias(r));
  }
}

MlpModel load_binary(std::istream& in) {
  if (get_le<std::uint32_t>(in, "magic") != kMagic) {
    throw ParseError("model snapshot: bad magic at offset 0");
  }
  auto version = get_le<std::uint32_t>(in, "version");
  if (version != kVersion) {
    throw ParseError("model snapshot: unsupported version " + std::to_string(version) +
                     " at offset 4");
  }
  auto count = get_le<std::uint32_t>(in, "layer count");
  MlpModel model;
  for (std::uint32_t k = 0; k < count; ++k) {
    auto out_dim = get_le<std::uint32_t>(in, "layer rows");
    auto in_dim = get_le<std::uint32_t>(in, "layer cols");
    auto act = get_le<std::uint8_t>(in, "activation");
    if (act > static_cast<std::uint8_t>(Activation::Identity)) {
      throw ParseError("model snapshot: bad activation code in layer " + std::to_string(k));
    }
    DenseLayer l;
    l.activation = static_cast<Activation>(act);
    l.weights.resize(out_dim, in_dim);
    l.bias.resize(out_dim);
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c)
        l.weights(r, c) = get_le<double>(in, "weight");
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = get_le<double>(in, "bias");
    model.layers.push_back(std::move(l));
  }
  model.validate();
  return model;
}

std::string to_json(const MlpModel& model) {
  nlohmann::json j;
  j["format"] = "fedbalance-mlp";
  j["version"] = kVersion;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : model.layers) {
    std::vector<double> w;
    w.reserve(l.weights.size());
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) w.push_back(l.weights(r, c));
    j["layers"].push_back({{"out", l.out_dim()},
                           {"in", l.in_dim()},
                           {"activation", to_string(l.activation)},
                           {"weights", w},
                           {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return j.dump();
}

MlpModel from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("model json: ") + e.what());
  }
  if (j.value("format", "") != "fedbalance-mlp") throw ParseError("model json: wrong format tag");
  MlpModel model;
  for (const auto& jl : j.at("layers")) {
    int out = jl.at("out"), in = jl.at("in");
    auto w = jl.at("weights").get<std::vector<double>>();
    auto b = jl.at("bias").get<std::vector<double>>();
    if (w.size() != static_cast<std::size_t>(out) * in || b.size() != static_cast<std::size_t>(out)) {
      throw ParseError("model json: tensor sizes do not match layer dims");
    }
    DenseLayer l;
    l.activation = activation_from_string(jl.at("activation"));
    l.weights.resize(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) l.weights(r, c) = w[static_cast<std::size_t>(r) * in + c];
    l.bias = Eigen::Map<Eigen::VectorXd>(b.data(), out);
    model.layers.push_back(std::move(l));
  }
  model.validate();
  return model;
}

}  // namespace fedbalance
