#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace pcv {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Activation tensor shape. Rows index points (1 after pooling / dense),
/// cols index features. Neuron (r, c) has flat index r * cols + c.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

enum class LayerKind {
  Conv1D,
  Dense,
  BatchNorm,
  ReLU,
  GlobalMaxPool,
  GlobalAvgPool,
  Reshape,
  Multiplication,
  Identity,
};

std::string_view to_string(LayerKind kind);
bool is_affine(LayerKind kind);

enum class MulMode {
  MatMul,       // (n, K) x (K, M) -> (n, M)
  Elementwise,  // equal sizes, output takes the first operand's shape
};

/// One output of a Multiplication layer is the sum of lhs[a] * rhs[b]
/// over its term list.
struct ProductTerm {
  std::size_t lhs;
  std::size_t rhs;
};

struct Layer {
  LayerKind kind = LayerKind::Identity;

  // Conv1D / Dense. Conv1D rows hold kernel * in_channels entries, tap-major.
  RowMatrix weight;
  Eigen::VectorXd bias;
  std::size_t kernel = 1;

  // BatchNorm
  Eigen::VectorXd gamma, beta, mean, var;
  double bn_eps = 0.0;

  // Reshape: output element i reads input element index_map[i].
  std::vector<std::size_t> index_map;
  Shape reshape_to;
  std::string map_name;  // e.g. "janet-3x3" when built from a named map

  // Multiplication: graph indices of the operands (0 = network input).
  std::size_t lhs = 0;
  std::size_t rhs = 0;
  MulMode mode = MulMode::MatMul;

  // Set when the original document said "Dropout".
  bool from_dropout = false;
};

/// Ordered layer graph. Graph index 0 is the input; layer i (0-based in
/// `layers`) produces graph index i + 1.
class Network {
 public:
  Network(Shape input_shape, std::size_t num_classes, std::vector<Layer> layers);

  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(std::size_t graph_index) const { return layers_.at(graph_index - 1); }
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t num_classes() const { return num_classes_; }
  const Shape& input_shape() const { return shapes_.front(); }
  /// Output shape of graph index i (0 = input).
  const Shape& shape(std::size_t graph_index) const { return shapes_.at(graph_index); }

  /// Product terms for every output of the Multiplication layer at `graph_index`.
  std::vector<std::vector<ProductTerm>> product_terms(std::size_t graph_index) const;

  /// Graph indices consumed by some Multiplication layer.
  const std::vector<bool>& is_mul_operand() const { return mul_operand_; }

 private:
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
  std::vector<bool> mul_operand_;
  std::size_t num_classes_;
};

struct PointCloud {
  RowMatrix points;  // n x point_dim
  std::optional<int> label;

  std::size_t num_points() const { return static_cast<std::size_t>(points.rows()); }
};

Network network_from_json(const nlohmann::json& doc);
nlohmann::json network_to_json(const Network& net);
Network load_network(const std::filesystem::path& path);
void save_network(const Network& net, const std::filesystem::path& path);

PointCloud cloud_from_json(const nlohmann::json& doc);
nlohmann::json cloud_to_json(const PointCloud& cloud);
PointCloud load_cloud(const std::filesystem::path& path);
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path);

/// Activations of every graph index, each flattened row-major.
std::vector<Eigen::VectorXd> forward_all(const Network& net, const PointCloud& cloud);
Eigen::VectorXd forward_eval(const Network& net, const PointCloud& cloud);
int predicted_class(const Eigen::VectorXd& logits);

struct AffineView {
  RowMatrix weight;  // out_size x in_size over flattened tensors
  Eigen::VectorXd bias;
};

/// Exact dense affine map of an affine layer given its input shape.
AffineView affine_view(const Layer& layer, const Shape& input_shape);

/// Row-major index map for a `janet-KxM` reshape: (1, K*M) -> (K, M).
std::vector<std::size_t> janet_index_map(std::size_t k, std::size_t m);

}  // namespace pcv
