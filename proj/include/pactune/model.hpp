#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pactune/rng.hpp"
#include "pactune/tensor.hpp"

namespace pactune {

/// Backbone is every layer but the last (the pretrained feature extractor);
/// Head is the final linear layer, replaced before fine-tuning.
enum class ParamGroup { Backbone, Head };

const char* group_name(ParamGroup g);
ParamGroup parse_group(const std::string& s);

struct Linear {
  Tensor weight;  // fan_in x fan_out
  Tensor bias;    // fan_out

  friend bool operator==(const Linear&, const Linear&) = default;
};

/// One weight or bias tensor of the model, in forward order:
/// slot 2l is layer l's weight, slot 2l+1 its bias.
struct ParamSlot {
  std::size_t layer = 0;
  bool is_bias = false;
  ParamGroup group = ParamGroup::Backbone;
  bool trainable = true;
};

/// Fully connected classifier with tanh hidden activations.
class MlpClassifier {
 public:
  MlpClassifier() = default;
  /// layer_sizes = {input d, hidden..., classes k}; weights start at zero.
  explicit MlpClassifier(std::vector<std::size_t> layer_sizes);

  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t num_classes() const { return sizes_.back(); }

  const Linear& layer(std::size_t i) const { return layers_.at(i); }
  Linear& layer(std::size_t i) { return layers_.at(i); }

  bool freeze_first_layer() const { return freeze_first_; }
  void set_freeze_first_layer(bool on) { freeze_first_ = on; }

  std::size_t num_slots() const { return 2 * layers_.size(); }
  ParamSlot slot_info(std::size_t s) const;
  Tensor& slot(std::size_t s);
  const Tensor& slot(std::size_t s) const;

  /// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases.
  void init_weights(Rng& rng);

  /// Swaps the final layer for a freshly initialized one with `classes`
  /// outputs. Backbone tensors are left untouched.
  void replace_head(std::size_t classes, Rng& rng);

  /// Logits for a batch, recorded on `tape`. `params` holds one Var per slot.
  Var forward(Tape& tape, std::span<const Var> params, Var x) const;

  /// Noise-free logits without gradient bookkeeping.
  Tensor logits(const Tensor& x) const;
  std::vector<int> predict(const Tensor& x) const;

  friend bool operator==(const MlpClassifier&, const MlpClassifier&) = default;

 private:
  std::vector<std::size_t> sizes_;
  std::vector<Linear> layers_;
  bool freeze_first_ = false;
};

// Flat views over the trainable parameters, in slot order. Backbone slots
// precede the head slots, so the flat vector is [backbone..., head...].
std::size_t trainable_count(const MlpClassifier& m, ParamGroup g);
std::size_t trainable_count(const MlpClassifier& m);
std::vector<double> flatten_trainable(const MlpClassifier& m);
std::vector<double> flatten_trainable(const MlpClassifier& m, ParamGroup g);
void assign_trainable(MlpClassifier& m, std::span<const double> flat);

struct Dataset;

/// Mean cross-entropy of the model on a batch; fills the flat trainable
/// gradient when `grad` is non-null.
double loss_and_grad(const MlpClassifier& m, const Dataset& batch, std::vector<double>* grad);

struct Provenance {
  std::uint64_t seed = 0;
  std::string task;
  std::int64_t epoch = 0;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct Checkpoint {
  static constexpr int kFormatVersion = 1;
  MlpClassifier model;
  Provenance provenance;
};

std::string checkpoint_to_string(const Checkpoint& ckpt);
Checkpoint checkpoint_from_string(const std::string& text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pactune
