#pragma once

// Layer interface. forward() fills a per-call TapeRecord with whatever the
// matching backward() needs; layers are not mutated by either pass.

#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "morphnet/tensor.hpp"

namespace morphnet {

class LayerError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Context {
  bool training = false;
  Rng* rng = nullptr;  // needed by dropout in training mode
};

template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
};

template <class T>
struct TapeRecord {
  const void* owner = nullptr;
  Shape input_shape;
  bool training = false;
  Tensor<T> saved;   // input patches or raw input
  Tensor<T> output;
  std::vector<Tensor<T>> weights;  // parameter snapshot at forward time
  // Winning cell per output for hard min/max (npos when the term is empty).
  std::vector<std::uint32_t> hit_index, miss_index;
  // Per output-channel cell activity (1 = participates).
  std::vector<std::uint8_t> hit_mask, miss_mask;
  Tensor<T> aux;
  std::vector<T> stats;

  static constexpr std::uint32_t npos = std::numeric_limits<std::uint32_t>::max();
};

template <class T>
struct Gradients {
  Tensor<T> input;
  std::vector<Tensor<T>> params;  // same order as Layer::params()
};

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, TapeRecord<T>& tape, const Context& ctx) const = 0;
  virtual Gradients<T> backward(const TapeRecord<T>& tape, const Tensor<T>& grad_out) const = 0;
  virtual nlohmann::json to_json() const = 0;

  virtual std::vector<Param<T>*> params() { return {}; }
  virtual std::vector<Param<T>*> buffers() { return {}; }
  std::vector<const Param<T>*> params() const {
    std::vector<const Param<T>*> out;
    for (auto* p : const_cast<Layer*>(this)->params()) out.push_back(p);
    return out;
  }

  /// Folds forward-time statistics (batchnorm running moments) into the layer.
  virtual void commit(const TapeRecord<T>&) {}

  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }

 protected:
  void claim(TapeRecord<T>& tape, const Shape& input_shape, const Context& ctx) const {
    tape = TapeRecord<T>{};
    tape.owner = this;
    tape.input_shape = input_shape;
    tape.training = ctx.training;
  }

  void check_tape(const TapeRecord<T>& tape) const {
    if (tape.owner != this)
      throw LayerError(kind() + ": backward given a tape recorded by another layer");
  }

  std::string name_;
};

template <class T>
using LayerPtr = std::unique_ptr<Layer<T>>;

}  // namespace morphnet
