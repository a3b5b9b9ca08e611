#include "pcv/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include "pcv/errors.hpp"

namespace pcv {

using nlohmann::json;

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.rows) + ", " + std::to_string(s.cols) + ")";
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv1D: return "Conv1D";
    case LayerKind::Dense: return "Dense";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::GlobalMaxPool: return "GlobalMaxPool";
    case LayerKind::GlobalAvgPool: return "GlobalAvgPool";
    case LayerKind::Reshape: return "Reshape";
    case LayerKind::Multiplication: return "Multiplication";
    case LayerKind::Identity: return "Identity";
  }
  return "?";
}

bool is_affine(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv1D:
    case LayerKind::Dense:
    case LayerKind::BatchNorm:
    case LayerKind::GlobalAvgPool:
    case LayerKind::Reshape:
    case LayerKind::Identity:
      return true;
    default:
      return false;
  }
}

std::vector<std::size_t> janet_index_map(std::size_t k, std::size_t m) {
  std::vector<std::size_t> map(k * m);
  for (std::size_t i = 0; i < k * m; ++i) map[i] = i;
  return map;
}

namespace {

std::string where(std::size_t graph_index, LayerKind kind) {
  return "layer " + std::to_string(graph_index) + " (" + std::string(to_string(kind)) + "): ";
}

void check_finite(const Eigen::Ref<const Eigen::MatrixXd>& m, const std::string& ctx) {
  if (!m.allFinite()) throw FormatError(ctx + "non-finite weight");
}

Shape output_shape(const Layer& layer, std::size_t index, const std::vector<Shape>& shapes) {
  const Shape& in = shapes[index - 1];
  const std::string ctx = where(index, layer.kind);
  switch (layer.kind) {
    case LayerKind::Conv1D: {
      if (layer.kernel == 0 || layer.kernel > in.rows)
        throw ShapeError(ctx + "kernel " + std::to_string(layer.kernel) + " does not fit input " +
                         to_string(in));
      const auto expected = static_cast<Eigen::Index>(layer.kernel * in.cols);
      if (layer.weight.cols() != expected)
        throw ShapeError(ctx + "expected weight rows of length " + std::to_string(expected) +
                         ", got " + std::to_string(layer.weight.cols()));
      if (layer.bias.size() != layer.weight.rows())
        throw ShapeError(ctx + "bias length " + std::to_string(layer.bias.size()) +
                         " != output channels " + std::to_string(layer.weight.rows()));
      return {in.rows - layer.kernel + 1, static_cast<std::size_t>(layer.weight.rows())};
    }
    case LayerKind::Dense: {
      if (layer.weight.cols() != static_cast<Eigen::Index>(in.size()))
        throw ShapeError(ctx + "expected weight rows of length " + std::to_string(in.size()) +
                         ", got " + std::to_string(layer.weight.cols()));
      if (layer.bias.size() != layer.weight.rows())
        throw ShapeError(ctx + "bias length " + std::to_string(layer.bias.size()) +
                         " != outputs " + std::to_string(layer.weight.rows()));
      return {1, static_cast<std::size_t>(layer.weight.rows())};
    }
    case LayerKind::BatchNorm: {
      const auto c = static_cast<Eigen::Index>(in.cols);
      if (layer.gamma.size() != c || layer.beta.size() != c || layer.mean.size() != c ||
          layer.var.size() != c)
        throw ShapeError(ctx + "expected " + std::to_string(in.cols) + " channels");
      if ((layer.var.array() < 0.0).any()) throw FormatError(ctx + "negative running variance");
      if ((layer.var.array() + layer.bn_eps <= 0.0).any())
        throw FormatError(ctx + "zero variance with zero eps");
      return in;
    }
    case LayerKind::ReLU:
    case LayerKind::Identity:
      return in;
    case LayerKind::GlobalMaxPool:
    case LayerKind::GlobalAvgPool:
      return {1, in.cols};
    case LayerKind::Reshape: {
      if (layer.reshape_to.size() != in.size())
        throw ShapeError(ctx + "cannot reshape " + to_string(in) + " to " +
                         to_string(layer.reshape_to));
      if (layer.index_map.size() != in.size())
        throw FormatError(ctx + "index map has " + std::to_string(layer.index_map.size()) +
                          " entries, expected " + std::to_string(in.size()));
      std::vector<bool> seen(in.size(), false);
      for (auto src : layer.index_map) {
        if (src >= in.size() || seen[src]) throw FormatError(ctx + "index map is not a bijection");
        seen[src] = true;
      }
      return layer.reshape_to;
    }
    case LayerKind::Multiplication: {
      if (layer.lhs >= index || layer.rhs >= index)
        throw FormatError(ctx + "operands must reference earlier graph indices");
      const Shape& a = shapes[layer.lhs];
      const Shape& b = shapes[layer.rhs];
      if (layer.mode == MulMode::MatMul) {
        if (a.cols != b.rows)
          throw ShapeError(ctx + "matmul operands " + to_string(a) + " x " + to_string(b));
        return {a.rows, b.cols};
      }
      if (a.size() != b.size())
        throw ShapeError(ctx + "elementwise operands " + to_string(a) + " vs " + to_string(b));
      return a;
    }
  }
  throw FormatError(ctx + "unknown kind");
}

}  // namespace

Network::Network(Shape input_shape, std::size_t num_classes, std::vector<Layer> layers)
    : layers_(std::move(layers)), num_classes_(num_classes) {
  if (layers_.empty()) throw FormatError("network has no layers");
  if (input_shape.size() == 0) throw ShapeError("empty input shape");
  shapes_.reserve(layers_.size() + 1);
  shapes_.push_back(input_shape);
  mul_operand_.assign(layers_.size() + 1, false);
  for (std::size_t i = 1; i <= layers_.size(); ++i) {
    const Layer& l = layers_[i - 1];
    const std::string ctx = where(i, l.kind);
    check_finite(l.weight, ctx);
    check_finite(l.bias, ctx);
    check_finite(l.gamma, ctx);
    check_finite(l.beta, ctx);
    check_finite(l.mean, ctx);
    check_finite(l.var, ctx);
    if (!std::isfinite(l.bn_eps)) throw FormatError(ctx + "non-finite eps");
    shapes_.push_back(output_shape(l, i, shapes_));
    if (l.kind == LayerKind::Multiplication) {
      mul_operand_[l.lhs] = true;
      mul_operand_[l.rhs] = true;
    }
  }
  if (shapes_.back().size() != num_classes_)
    throw ShapeError("network output " + to_string(shapes_.back()) + " does not match " +
                     std::to_string(num_classes_) + " classes");
}

std::vector<std::vector<ProductTerm>> Network::product_terms(std::size_t graph_index) const {
  const Layer& l = layer(graph_index);
  if (l.kind != LayerKind::Multiplication)
    throw ContractError("product_terms on non-multiplication layer");
  const Shape& a = shapes_[l.lhs];
  const Shape& b = shapes_[l.rhs];
  const Shape& out = shapes_[graph_index];
  std::vector<std::vector<ProductTerm>> terms(out.size());
  if (l.mode == MulMode::Elementwise) {
    for (std::size_t i = 0; i < out.size(); ++i) terms[i] = {{i, i}};
    return terms;
  }
  // out(x, y) = sum_k lhs(x, k) * rhs(k, y)
  for (std::size_t x = 0; x < out.rows; ++x)
    for (std::size_t y = 0; y < out.cols; ++y) {
      auto& t = terms[x * out.cols + y];
      t.reserve(a.cols);
      for (std::size_t k = 0; k < a.cols; ++k) t.push_back({x * a.cols + k, k * b.cols + y});
    }
  return terms;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

Eigen::VectorXd read_vector(const json& j, const std::string& ctx, const char* key) {
  if (!j.contains(key) || !j[key].is_array()) throw FormatError(ctx + "missing array '" + key + "'");
  const auto& a = j[key];
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) throw FormatError(ctx + "non-numeric entry in '" + key + "'");
    v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  }
  return v;
}

RowMatrix read_matrix(const json& j, const std::string& ctx, const char* key) {
  if (!j.contains(key) || !j[key].is_array() || j[key].empty())
    throw FormatError(ctx + "missing matrix '" + key + "'");
  const auto& a = j[key];
  const std::size_t cols = a[0].is_array() ? a[0].size() : 0;
  RowMatrix m(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < a.size(); ++r) {
    if (!a[r].is_array() || a[r].size() != cols)
      throw FormatError(ctx + "ragged matrix '" + key + "'");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!a[r][c].is_number()) throw FormatError(ctx + "non-numeric entry in '" + key + "'");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = a[r][c].get<double>();
    }
  }
  return m;
}

json write_vector(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json write_matrix(const RowMatrix& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(std::move(row));
  }
  return a;
}

std::size_t read_count(const json& j, const std::string& ctx, const char* key) {
  if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<long long>() < 0)
    throw FormatError(ctx + "'" + key + "' must be a non-negative integer");
  return j[key].get<std::size_t>();
}

Layer layer_from_json(const json& j, std::size_t index) {
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
    throw FormatError("layer " + std::to_string(index) + ": missing 'kind'");
  const std::string kind = j["kind"].get<std::string>();
  const std::string ctx = "layer " + std::to_string(index) + " (" + kind + "): ";
  Layer l;
  if (kind == "Conv1D") {
    l.kind = LayerKind::Conv1D;
    l.kernel = j.contains("kernel") ? read_count(j, ctx, "kernel") : 1;
    l.weight = read_matrix(j, ctx, "weight");
    l.bias = read_vector(j, ctx, "bias");
  } else if (kind == "Dense") {
    l.kind = LayerKind::Dense;
    l.weight = read_matrix(j, ctx, "weight");
    l.bias = read_vector(j, ctx, "bias");
  } else if (kind == "BatchNorm") {
    l.kind = LayerKind::BatchNorm;
    l.gamma = read_vector(j, ctx, "gamma");
    l.beta = read_vector(j, ctx, "beta");
    l.mean = read_vector(j, ctx, "mean");
    l.var = read_vector(j, ctx, "var");
    if (!j.contains("eps") || !j["eps"].is_number()) throw FormatError(ctx + "missing 'eps'");
    l.bn_eps = j["eps"].get<double>();
  } else if (kind == "ReLU") {
    l.kind = LayerKind::ReLU;
  } else if (kind == "GlobalMaxPool") {
    l.kind = LayerKind::GlobalMaxPool;
  } else if (kind == "GlobalAvgPool") {
    l.kind = LayerKind::GlobalAvgPool;
  } else if (kind == "Identity") {
    l.kind = LayerKind::Identity;
  } else if (kind == "Dropout") {
    l.kind = LayerKind::Identity;
    l.from_dropout = true;
  } else if (kind == "Reshape") {
    l.kind = LayerKind::Reshape;
    if (!j.contains("map")) throw FormatError(ctx + "missing 'map'");
    const auto& map = j["map"];
    if (map.is_string()) {
      static const std::regex named(R"(janet-(\d+)x(\d+))");
      std::smatch m;
      const std::string s = map.get<std::string>();
      if (!std::regex_match(s, m, named)) throw FormatError(ctx + "unknown map '" + s + "'");
      const std::size_t k = std::stoul(m[1].str());
      const std::size_t c = std::stoul(m[2].str());
      l.reshape_to = {k, c};
      l.index_map = janet_index_map(k, c);
      l.map_name = s;
    } else if (map.is_array()) {
      if (!j.contains("shape") || !j["shape"].is_array() || j["shape"].size() != 2)
        throw FormatError(ctx + "explicit map needs 'shape': [rows, cols]");
      l.reshape_to = {j["shape"][0].get<std::size_t>(), j["shape"][1].get<std::size_t>()};
      for (const auto& v : map) {
        if (!v.is_number_integer() || v.get<long long>() < 0)
          throw FormatError(ctx + "map entries must be non-negative integers");
        l.index_map.push_back(v.get<std::size_t>());
      }
    } else {
      throw FormatError(ctx + "'map' must be a name or an index array");
    }
  } else if (kind == "Multiplication") {
    l.kind = LayerKind::Multiplication;
    if (!j.contains("operands") || !j["operands"].is_array() || j["operands"].size() != 2 ||
        !j["operands"][0].is_number_integer() || !j["operands"][1].is_number_integer())
      throw FormatError(ctx + "'operands' must be two graph indices");
    const auto a = j["operands"][0].get<long long>();
    const auto b = j["operands"][1].get<long long>();
    if (a < 0 || b < 0) throw FormatError(ctx + "negative operand index");
    l.lhs = static_cast<std::size_t>(a);
    l.rhs = static_cast<std::size_t>(b);
    if (j.contains("mode")) {
      const auto mode = j["mode"].get<std::string>();
      if (mode == "matmul") l.mode = MulMode::MatMul;
      else if (mode == "elementwise") l.mode = MulMode::Elementwise;
      else throw FormatError(ctx + "unknown mode '" + mode + "'");
    }
  } else {
    throw FormatError(ctx + "unknown layer kind");
  }
  return l;
}

json layer_to_json(const Layer& l) {
  json j;
  switch (l.kind) {
    case LayerKind::Conv1D:
      j["kind"] = "Conv1D";
      j["kernel"] = l.kernel;
      j["weight"] = write_matrix(l.weight);
      j["bias"] = write_vector(l.bias);
      break;
    case LayerKind::Dense:
      j["kind"] = "Dense";
      j["weight"] = write_matrix(l.weight);
      j["bias"] = write_vector(l.bias);
      break;
    case LayerKind::BatchNorm:
      j["kind"] = "BatchNorm";
      j["gamma"] = write_vector(l.gamma);
      j["beta"] = write_vector(l.beta);
      j["mean"] = write_vector(l.mean);
      j["var"] = write_vector(l.var);
      j["eps"] = l.bn_eps;
      break;
    case LayerKind::Reshape:
      j["kind"] = "Reshape";
      if (!l.map_name.empty()) {
        j["map"] = l.map_name;
      } else {
        j["map"] = l.index_map;
        j["shape"] = {l.reshape_to.rows, l.reshape_to.cols};
      }
      break;
    case LayerKind::Multiplication:
      j["kind"] = "Multiplication";
      j["operands"] = {l.lhs, l.rhs};
      j["mode"] = l.mode == MulMode::MatMul ? "matmul" : "elementwise";
      break;
    case LayerKind::Identity:
      j["kind"] = l.from_dropout ? "Dropout" : "Identity";
      break;
    default:
      j["kind"] = std::string(to_string(l.kind));
  }
  return j;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string() + ": cannot open");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json_file(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot write");
  out << j.dump() << '\n';
}

}  // namespace

Network network_from_json(const json& doc) {
  if (!doc.is_object()) throw FormatError("model document must be an object");
  if (!doc.contains("input_shape") || !doc["input_shape"].is_array() ||
      doc["input_shape"].size() != 2)
    throw FormatError("model: 'input_shape' must be [n_points, point_dim]");
  Shape input{doc["input_shape"][0].get<std::size_t>(), doc["input_shape"][1].get<std::size_t>()};
  const std::size_t classes = read_count(doc, "model: ", "num_classes");
  if (!doc.contains("layers") || !doc["layers"].is_array())
    throw FormatError("model: missing 'layers' array");
  if (doc["layers"].empty()) throw FormatError("model: empty layer list");
  std::vector<Layer> layers;
  std::size_t index = 1;
  for (const auto& lj : doc["layers"]) layers.push_back(layer_from_json(lj, index++));
  return Network(input, classes, std::move(layers));
}

json network_to_json(const Network& net) {
  json doc;
  doc["input_shape"] = {net.input_shape().rows, net.input_shape().cols};
  doc["num_classes"] = net.num_classes();
  doc["layers"] = json::array();
  for (const auto& l : net.layers()) doc["layers"].push_back(layer_to_json(l));
  return doc;
}

Network load_network(const std::filesystem::path& path) {
  try {
    return network_from_json(read_json_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(path.string() + ": " + e.what());
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_network(const Network& net, const std::filesystem::path& path) {
  write_json_file(network_to_json(net), path);
}

PointCloud cloud_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("points"))
    throw FormatError("point cloud: missing 'points'");
  PointCloud cloud;
  cloud.points = read_matrix(doc, "point cloud: ", "points");
  if (!cloud.points.allFinite()) throw FormatError("point cloud: non-finite coordinate");
  if (doc.contains("label") && !doc["label"].is_null()) {
    if (!doc["label"].is_number_integer()) throw FormatError("point cloud: 'label' must be an integer");
    cloud.label = doc["label"].get<int>();
  }
  return cloud;
}

json cloud_to_json(const PointCloud& cloud) {
  json doc;
  doc["points"] = write_matrix(cloud.points);
  if (cloud.label) doc["label"] = *cloud.label;
  return doc;
}

PointCloud load_cloud(const std::filesystem::path& path) {
  try {
    return cloud_from_json(read_json_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  write_json_file(cloud_to_json(cloud), path);
}

// ---------------------------------------------------------------------------
// Inference

std::vector<Eigen::VectorXd> forward_all(const Network& net, const PointCloud& cloud) {
  const Shape& in_shape = net.input_shape();
  if (cloud.points.rows() != static_cast<Eigen::Index>(in_shape.rows) ||
      cloud.points.cols() != static_cast<Eigen::Index>(in_shape.cols))
    throw ShapeError("point cloud (" + std::to_string(cloud.points.rows()) + ", " +
                     std::to_string(cloud.points.cols()) + ") does not match input " +
                     to_string(in_shape));

  std::vector<Eigen::VectorXd> acts;
  acts.reserve(net.num_layers() + 1);
  acts.emplace_back(Eigen::Map<const Eigen::VectorXd>(cloud.points.data(), cloud.points.size()));

  for (std::size_t i = 1; i <= net.num_layers(); ++i) {
    const Layer& l = net.layer(i);
    const Shape& in = net.shape(i - 1);
    const Shape& out = net.shape(i);
    const Eigen::VectorXd& x = acts[i - 1];
    Eigen::VectorXd y(static_cast<Eigen::Index>(out.size()));
    switch (l.kind) {
      case LayerKind::Conv1D: {
        const std::size_t cin = in.cols;
        for (std::size_t r = 0; r < out.rows; ++r)
          for (std::size_t o = 0; o < out.cols; ++o) {
            double acc = l.bias[static_cast<Eigen::Index>(o)];
            for (std::size_t t = 0; t < l.kernel; ++t)
              for (std::size_t c = 0; c < cin; ++c)
                acc += l.weight(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(t * cin + c)) *
                       x[static_cast<Eigen::Index>((r + t) * cin + c)];
            y[static_cast<Eigen::Index>(r * out.cols + o)] = acc;
          }
        break;
      }
      case LayerKind::Dense:
        for (Eigen::Index o = 0; o < l.weight.rows(); ++o) {
          double acc = l.bias[o];
          for (Eigen::Index c = 0; c < l.weight.cols(); ++c) acc += l.weight(o, c) * x[c];
          y[o] = acc;
        }
        break;
      case LayerKind::BatchNorm:
        for (std::size_t r = 0; r < in.rows; ++r)
          for (std::size_t c = 0; c < in.cols; ++c) {
            const auto ci = static_cast<Eigen::Index>(c);
            const double scale = l.gamma[ci] / std::sqrt(l.var[ci] + l.bn_eps);
            const auto idx = static_cast<Eigen::Index>(r * in.cols + c);
            y[idx] = scale * (x[idx] - l.mean[ci]) + l.beta[ci];
          }
        break;
      case LayerKind::ReLU:
        y = x.cwiseMax(0.0);
        break;
      case LayerKind::Identity:
        y = x;
        break;
      case LayerKind::GlobalMaxPool:
        for (std::size_t c = 0; c < in.cols; ++c) {
          double m = x[static_cast<Eigen::Index>(c)];
          for (std::size_t r = 1; r < in.rows; ++r)
            m = std::max(m, x[static_cast<Eigen::Index>(r * in.cols + c)]);
          y[static_cast<Eigen::Index>(c)] = m;
        }
        break;
      case LayerKind::GlobalAvgPool:
        for (std::size_t c = 0; c < in.cols; ++c) {
          double s = 0.0;
          for (std::size_t r = 0; r < in.rows; ++r) s += x[static_cast<Eigen::Index>(r * in.cols + c)];
          y[static_cast<Eigen::Index>(c)] = s / static_cast<double>(in.rows);
        }
        break;
      case LayerKind::Reshape:
        for (std::size_t k = 0; k < out.size(); ++k)
          y[static_cast<Eigen::Index>(k)] = x[static_cast<Eigen::Index>(l.index_map[k])];
        break;
      case LayerKind::Multiplication: {
        const auto terms = net.product_terms(i);
        const Eigen::VectorXd& a = acts[l.lhs];
        const Eigen::VectorXd& b = acts[l.rhs];
        for (std::size_t k = 0; k < out.size(); ++k) {
          double acc = 0.0;
          for (const auto& t : terms[k])
            acc += a[static_cast<Eigen::Index>(t.lhs)] * b[static_cast<Eigen::Index>(t.rhs)];
          y[static_cast<Eigen::Index>(k)] = acc;
        }
        break;
      }
    }
    acts.push_back(std::move(y));
  }
  return acts;
}

Eigen::VectorXd forward_eval(const Network& net, const PointCloud& cloud) {
  return forward_all(net, cloud).back();
}

int predicted_class(const Eigen::VectorXd& logits) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<int>(best);
}

AffineView affine_view(const Layer& layer, const Shape& in) {
  if (!is_affine(layer.kind))
    throw ContractError("affine_view called on " + std::string(to_string(layer.kind)));
  AffineView v;
  const auto n_in = static_cast<Eigen::Index>(in.size());
  switch (layer.kind) {
    case LayerKind::Conv1D: {
      const std::size_t rows_out = in.rows - layer.kernel + 1;
      const auto cout = static_cast<std::size_t>(layer.weight.rows());
      v.weight = RowMatrix::Zero(static_cast<Eigen::Index>(rows_out * cout), n_in);
      v.bias.resize(static_cast<Eigen::Index>(rows_out * cout));
      for (std::size_t r = 0; r < rows_out; ++r)
        for (std::size_t o = 0; o < cout; ++o) {
          const auto row = static_cast<Eigen::Index>(r * cout + o);
          v.bias[row] = layer.bias[static_cast<Eigen::Index>(o)];
          for (std::size_t t = 0; t < layer.kernel; ++t)
            for (std::size_t c = 0; c < in.cols; ++c)
              v.weight(row, static_cast<Eigen::Index>((r + t) * in.cols + c)) =
                  layer.weight(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(t * in.cols + c));
        }
      break;
    }
    case LayerKind::Dense:
      v.weight = layer.weight;
      v.bias = layer.bias;
      break;
    case LayerKind::BatchNorm:
      v.weight = RowMatrix::Zero(n_in, n_in);
      v.bias.resize(n_in);
      for (std::size_t r = 0; r < in.rows; ++r)
        for (std::size_t c = 0; c < in.cols; ++c) {
          const auto ci = static_cast<Eigen::Index>(c);
          const auto idx = static_cast<Eigen::Index>(r * in.cols + c);
          const double scale = layer.gamma[ci] / std::sqrt(layer.var[ci] + layer.bn_eps);
          v.weight(idx, idx) = scale;
          v.bias[idx] = layer.beta[ci] - scale * layer.mean[ci];
        }
      break;
    case LayerKind::GlobalAvgPool:
      v.weight = RowMatrix::Zero(static_cast<Eigen::Index>(in.cols), n_in);
      v.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(in.cols));
      for (std::size_t r = 0; r < in.rows; ++r)
        for (std::size_t c = 0; c < in.cols; ++c)
          v.weight(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r * in.cols + c)) =
              1.0 / static_cast<double>(in.rows);
      break;
    case LayerKind::Reshape:
      v.weight = RowMatrix::Zero(n_in, n_in);
      v.bias = Eigen::VectorXd::Zero(n_in);
      for (std::size_t k = 0; k < layer.index_map.size(); ++k)
        v.weight(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(layer.index_map[k])) = 1.0;
      break;
    case LayerKind::Identity:
      v.weight = RowMatrix::Identity(n_in, n_in);
      v.bias = Eigen::VectorXd::Zero(n_in);
      break;
    default:
      break;
  }
  return v;
}

}  // namespace pcv
