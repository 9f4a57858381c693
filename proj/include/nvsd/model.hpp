#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "nvsd/optim.hpp"
#include "nvsd/render.hpp"
#include "nvsd/scene.hpp"
#include "nvsd/tensor.hpp"

namespace nvsd {

// How the condition image reaches the denoiser.
enum class Mechanism {
  Concat,       // condition channels stacked onto the network input
  GlobalToken,  // condition pooled to one key/value token
  DenseXAttn,   // per-resolution cross-attention over condition features
};

const char* mechanism_name(Mechanism m);
Mechanism parse_mechanism(const std::string& s);  // throws std::invalid_argument

struct DenoiserConfig {
  int resolution = 32;
  int base_channels = 8;
  std::vector<int> channel_mult{1, 2, 4};  // 3 levels: 32, 16, 8 px
  Mechanism mechanism = Mechanism::DenseXAttn;
  bool pose_token = true;  // extra K/V row in the dense cross-attention
  bool text = true;        // caption cross-attention at 16 and 8 px
  int freq_bands = 6;      // L
  int text_dim = 16;       // d_txt
  int max_caption_len = 20;
  int time_dim = 32;

  // Throws std::invalid_argument on inconsistent settings (e.g. pose_token
  // without dense_xattn: the token has no K/V list to append to).
  void validate() const;
};

// Fixed word-level tokenizer over the caption grammar, with three reserved
// ids in front of the vocabulary.
struct Tokenizer {
  static constexpr int kPad = 0;
  static constexpr int kNull = 1;      // the unconditional caption
  static constexpr int kInverted = 2;  // placeholder word whose embedding
                                       // textual inversion optimizes
  std::vector<std::string> words;

  static Tokenizer standard();
  int size() const { return static_cast<int>(words.size()); }
  int id(const std::string& w) const;  // throws std::out_of_range
  // Pads with <pad>; throws std::invalid_argument if the caption is longer
  // than max_len or contains an unknown word.
  std::vector<int> encode(const std::vector<std::string>& tokens,
                          int max_len) const;
  static std::vector<int> null_sequence(int max_len);
};

// Raw (dtheta, sin dphi, cos dphi, dr) followed by (sin(2^k pi p),
// cos(2^k pi p)) for k = 0..L-1 per component. Length 4 + 8L.
std::vector<float> frequency_encode(const RelativePose& p, int L);

// Image <-> tensor, mapping pixel range [0,1] to model range [-1,1].
Tensor image_to_tensor(const Image& im);
Image tensor_to_image(const Tensor& t);

class Denoiser {
 public:
  Denoiser(const DenoiserConfig& cfg, SeededRng& init_rng);

  const DenoiserConfig& config() const { return cfg_; }
  const Tokenizer& tokenizer() const { return tok_; }

  std::vector<NamedParam>& parameters() { return params_; }
  const std::vector<NamedParam>& parameters() const { return params_; }
  Tensor& param(const std::string& name);  // throws std::out_of_range
  std::size_t parameter_count() const;

  // Optimizer groups: everything under "pose." trains hotter.
  std::vector<NamedParam> pose_group() const;
  std::vector<NamedParam> main_group() const;

  // [max_len x d_txt]; pad positions carry garbage but are masked out of
  // every attention that consumes them.
  Tensor encode_text(const std::vector<int>& ids) const;

  // Full forward. x_t: [3 x res x res] in [-1,1] units plus noise. Pass an
  // undefined Tensor as x_c for the null image. t in [1, 1000].
  Tensor predict_noise(const Tensor& x_t, int t, const Tensor& x_c,
                       const RelativePose& pose,
                       const std::vector<int>& caption) const;

 private:
  struct Site;  // attention site descriptor

  Tensor make_param(const std::string& name, std::vector<int> shape,
                    float stddev, SeededRng& rng);
  Tensor timestep_embedding(int t, const RelativePose& pose) const;
  Tensor resblock(const std::string& prefix, const Tensor& x,
                  const Tensor& temb) const;
  // Condition feature maps at 16 and 8 px (learned null maps when x_c is
  // undefined); index 0 -> 16 px, 1 -> 8 px.
  std::vector<Tensor> encode_condition(const Tensor& x_c) const;
  Tensor attention_site(const std::string& prefix, const Tensor& x,
                        const Tensor& text_feat, const Tensor& text_mask,
                        const Tensor& cond_feat,
                        const std::vector<float>& pose_code) const;

  DenoiserConfig cfg_;
  Tokenizer tok_;
  std::vector<NamedParam> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace nvsd
