#include "nvsd/model.hpp"

#include <cmath>
#include <stdexcept>

namespace nvsd {

namespace {

constexpr float kMaskOff = -1e9f;

int gn_groups(int channels) { return channels % 4 == 0 ? 4 : 1; }

// Classic transformer sinusoid over [count x dim].
Tensor sinusoid_rows(int count, int dim, float offset = 0.0f) {
  std::vector<float> v(static_cast<std::size_t>(count) * dim);
  int half = dim / 2;
  for (int p = 0; p < count; ++p)
    for (int i = 0; i < half; ++i) {
      double f = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
      double a = (p + offset) * f;
      v[p * dim + i] = static_cast<float>(std::sin(a));
      v[p * dim + half + i] = static_cast<float>(std::cos(a));
    }
  return Tensor::from({count, dim}, std::move(v));
}

}  // namespace

const char* mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::Concat: return "concat";
    case Mechanism::GlobalToken: return "global_token";
    case Mechanism::DenseXAttn: return "dense_xattn";
  }
  return "?";
}

Mechanism parse_mechanism(const std::string& s) {
  if (s == "concat") return Mechanism::Concat;
  if (s == "global_token") return Mechanism::GlobalToken;
  if (s == "dense_xattn") return Mechanism::DenseXAttn;
  throw std::invalid_argument("unknown mechanism '" + s +
                              "' (expected concat, global_token or dense_xattn)");
}

void DenoiserConfig::validate() const {
  if (resolution < 8 || resolution % 4 != 0)
    throw std::invalid_argument("resolution must be a multiple of 4, >= 8");
  if (channel_mult.size() != 3)
    throw std::invalid_argument("expected exactly 3 channel multipliers");
  if (base_channels < 1) throw std::invalid_argument("base_channels < 1");
  if (pose_token && mechanism != Mechanism::DenseXAttn)
    throw std::invalid_argument(
        "pose_token needs mechanism=dense_xattn (the token is appended to "
        "its key/value list)");
  if (freq_bands < 1) throw std::invalid_argument("freq_bands < 1");
  if (text_dim < 2 || text_dim % 2 != 0)
    throw std::invalid_argument("text_dim must be even, >= 2");
  if (max_caption_len < 2) throw std::invalid_argument("max_caption_len < 2");
  if (time_dim < 2 || time_dim % 2 != 0)
    throw std::invalid_argument("time_dim must be even, >= 2");
}

Tokenizer Tokenizer::standard() {
  Tokenizer t;
  t.words = {"<pad>", "<null>", "<s*>"};
  for (const auto& w : caption_vocabulary()) t.words.push_back(w);
  return t;
}

int Tokenizer::id(const std::string& w) const {
  for (std::size_t i = 0; i < words.size(); ++i)
    if (words[i] == w) return static_cast<int>(i);
  throw std::out_of_range("word not in vocabulary: '" + w + "'");
}

std::vector<int> Tokenizer::encode(const std::vector<std::string>& tokens,
                                   int max_len) const {
  if (static_cast<int>(tokens.size()) > max_len)
    throw std::invalid_argument("caption longer than max length");
  std::vector<int> ids(max_len, kPad);
  for (std::size_t i = 0; i < tokens.size(); ++i) ids[i] = id(tokens[i]);
  return ids;
}

std::vector<int> Tokenizer::null_sequence(int max_len) {
  std::vector<int> ids(max_len, kPad);
  ids[0] = kNull;
  return ids;
}

std::vector<float> frequency_encode(const RelativePose& p, int L) {
  if (L < 1) throw std::invalid_argument("frequency_encode: L < 1");
  const float raw[4] = {p.dtheta, p.sin_dphi, p.cos_dphi, p.dr};
  std::vector<float> out;
  out.reserve(4 + 8 * L);
  for (float r : raw) out.push_back(r);
  for (float r : raw)
    for (int k = 0; k < L; ++k) {
      double a = std::ldexp(static_cast<double>(r), k) * M_PI;
      out.push_back(static_cast<float>(std::sin(a)));
      out.push_back(static_cast<float>(std::cos(a)));
    }
  return out;
}

Tensor image_to_tensor(const Image& im) {
  std::vector<float> v(im.chw.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 2.0f * im.chw[i] - 1.0f;
  return Tensor::from({3, im.res, im.res}, std::move(v));
}

Image tensor_to_image(const Tensor& t) {
  Image im;
  im.res = t.dim(1);
  im.chw.resize(t.numel());
  for (std::size_t i = 0; i < im.chw.size(); ++i) {
    float v = 0.5f * (t.data()[i] + 1.0f);
    im.chw[i] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  }
  return im;
}

// ---------------------------------------------------------------------------

Tensor Denoiser::make_param(const std::string& name, std::vector<int> shape,
                            float stddev, SeededRng& rng) {
  Tensor t = stddev == 0.0f ? Tensor::zeros(shape, true)
                            : Tensor::randn(shape, rng, stddev, true);
  index_[name] = params_.size();
  params_.push_back({name, t});
  return t;
}

Tensor& Denoiser::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
  return params_[it->second].tensor;
}

std::size_t Denoiser::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

std::vector<NamedParam> Denoiser::pose_group() const {
  std::vector<NamedParam> g;
  for (const auto& p : params_)
    if (p.name.rfind("pose.", 0) == 0) g.push_back(p);
  return g;
}

std::vector<NamedParam> Denoiser::main_group() const {
  std::vector<NamedParam> g;
  for (const auto& p : params_)
    if (p.name.rfind("pose.", 0) != 0) g.push_back(p);
  return g;
}

Denoiser::Denoiser(const DenoiserConfig& cfg, SeededRng& init_rng)
    : cfg_(cfg), tok_(Tokenizer::standard()) {
  cfg_.validate();
  SeededRng rng = init_rng;  // private copy; creation order fixes the draw
  const int c0 = cfg_.base_channels * cfg_.channel_mult[0];
  const int c1 = cfg_.base_channels * cfg_.channel_mult[1];
  const int c2 = cfg_.base_channels * cfg_.channel_mult[2];
  const int td = cfg_.time_dim;
  const int dt = cfg_.text_dim;
  const int pin = 4 + 8 * cfg_.freq_bands;
  const int res = cfg_.resolution;
  auto winit = [](int fan_in) { return 1.0f / std::sqrt((float)fan_in); };

  auto mk_linear = [&](const std::string& n, int in, int out, bool zero = false) {
    make_param(n + ".w", {in, out}, zero ? 0.0f : winit(in), rng);
    make_param(n + ".b", {out}, 0.0f, rng);
  };
  auto mk_conv = [&](const std::string& n, int in, int out, int k,
                     bool zero = false) {
    make_param(n + ".w", {out, in, k, k}, zero ? 0.0f : winit(in * k * k), rng);
    make_param(n + ".b", {out}, 0.0f, rng);
  };
  auto mk_norm = [&](const std::string& n, int c) {
    Tensor g = make_param(n + ".g", {c}, 0.0f, rng);
    std::fill(g.data().begin(), g.data().end(), 1.0f);
    make_param(n + ".b", {c}, 0.0f, rng);
  };
  auto mk_res = [&](const std::string& n, int in, int out) {
    mk_norm(n + ".gn1", in);
    mk_conv(n + ".conv1", in, out, 3);
    mk_linear(n + ".temb", td, out);
    mk_norm(n + ".gn2", out);
    mk_conv(n + ".conv2", out, out, 3, /*zero=*/true);
    if (in != out) mk_conv(n + ".skip", in, out, 1);
  };

  // Timestep + pose pathway into every resblock.
  mk_linear("temb.mlp1", td, td);
  mk_linear("temb.mlp2", td, td);
  mk_linear("pose.emb1", pin, td);
  mk_linear("pose.emb2", td, td);

  // Text encoder.
  if (cfg_.text) {
    make_param("txt.embed", {tok_.size(), dt}, 1.0f, rng);
    for (int b = 0; b < 2; ++b) {
      std::string n = "txt.b" + std::to_string(b);
      mk_norm(n + ".ln1", dt);
      mk_linear(n + ".wq", dt, dt);
      mk_linear(n + ".wk", dt, dt);
      mk_linear(n + ".wv", dt, dt);
      mk_linear(n + ".wo", dt, dt, /*zero=*/true);
      mk_norm(n + ".ln2", dt);
      mk_linear(n + ".mlp1", dt, 4 * dt);
      mk_linear(n + ".mlp2", 4 * dt, dt, /*zero=*/true);
    }
  }

  // Condition pyramid (shared by global_token and dense_xattn) and the
  // learned null feature maps.
  if (cfg_.mechanism != Mechanism::Concat) {
    mk_conv("cond.conv0", 3, c0, 3);
    mk_conv("cond.conv1", c0, c1, 3);
    mk_conv("cond.conv2", c1, c2, 3);
    make_param("cond.null16", {c1, res / 2, res / 2}, 0.02f, rng);
    make_param("cond.null8", {c2, res / 4, res / 4}, 0.02f, rng);
  } else {
    make_param("cond.null_img", {3, res, res}, 0.02f, rng);
  }

  // U-Net trunk.
  mk_conv("in.conv", cfg_.mechanism == Mechanism::Concat ? 6 : 3, c0, 3);
  mk_res("enc0", c0, c0);
  mk_res("enc1", c0, c1);
  mk_res("enc2", c1, c2);
  mk_res("mid1", c2, c2);
  mk_res("mid2", c2, c2);
  mk_res("dec1", c2 + c1, c1);
  mk_res("dec0", c1 + c0, c0);
  mk_norm("out.gn", c0);
  mk_conv("out.conv", c0, 3, 3, /*zero=*/true);

  // Attention sites: {name, width, condition width at that resolution}.
  const int dc16 = cfg_.mechanism == Mechanism::GlobalToken ? c2 : c1;
  const int dc8 = c2;
  struct { const char* n; int d; int dc; bool self_attn; } sites[] = {
      {"site.enc16", c1, dc16, false},
      {"site.enc8", c2, dc8, false},
      {"site.mid8", c2, dc8, true},
      {"site.dec16", c1, dc16, false},
  };
  for (const auto& s : sites) {
    std::string n = s.n;
    if (s.self_attn) {
      mk_norm(n + ".self.ln", s.d);
      mk_linear(n + ".self.wq", s.d, s.d);
      mk_linear(n + ".self.wk", s.d, s.d);
      mk_linear(n + ".self.wv", s.d, s.d);
      mk_linear(n + ".self.wo", s.d, s.d, /*zero=*/true);
    }
    if (cfg_.text) {
      mk_norm(n + ".txt.ln", s.d);
      mk_linear(n + ".txt.wq", s.d, s.d);
      mk_linear(n + ".txt.wk", dt, s.d);
      mk_linear(n + ".txt.wv", dt, s.d);
      mk_linear(n + ".txt.wo", s.d, s.d, /*zero=*/true);
    }
    if (cfg_.mechanism != Mechanism::Concat) {
      mk_norm(n + ".img.ln", s.d);
      mk_linear(n + ".img.wq", s.d, s.d);
      mk_linear(n + ".img.wk", s.dc, s.d);
      mk_linear(n + ".img.wv", s.dc, s.d);
      mk_linear(n + ".img.wo", s.d, s.d, /*zero=*/true);
      if (cfg_.pose_token) {
        make_param("pose." + n + ".kp", {pin, s.d}, winit(pin), rng);
        make_param("pose." + n + ".vp", {pin, s.d}, winit(pin), rng);
      }
    }
  }
}

// ---------------------------------------------------------------------------

namespace {
// Small helpers over a const Denoiser; param() is non-const, so the forward
// passes go through this cast — forward never mutates parameter values.
}  // namespace

Tensor Denoiser::timestep_embedding(int t, const RelativePose& pose) const {
  auto& self = const_cast<Denoiser&>(*this);
  Tensor ts = sinusoid_rows(1, cfg_.time_dim, static_cast<float>(t));
  Tensor h = silu(linear(ts, self.param("temb.mlp1.w"), self.param("temb.mlp1.b")));
  h = linear(h, self.param("temb.mlp2.w"), self.param("temb.mlp2.b"));
  std::vector<float> code = frequency_encode(pose, cfg_.freq_bands);
  Tensor pc = Tensor::from({1, static_cast<int>(code.size())}, code);
  Tensor p = silu(linear(pc, self.param("pose.emb1.w"), self.param("pose.emb1.b")));
  p = linear(p, self.param("pose.emb2.w"), self.param("pose.emb2.b"));
  return add(h, p);
}

Tensor Denoiser::resblock(const std::string& n, const Tensor& x,
                          const Tensor& temb) const {
  auto& self = const_cast<Denoiser&>(*this);
  const int in = x.dim(0);
  Tensor h = silu(group_norm(x, gn_groups(in), self.param(n + ".gn1.g"),
                             self.param(n + ".gn1.b")));
  h = conv2d(h, self.param(n + ".conv1.w"), self.param(n + ".conv1.b"), 1, 1);
  const int out = h.dim(0);
  Tensor tb = linear(temb, self.param(n + ".temb.w"), self.param(n + ".temb.b"));
  h = add_channel_bias(h, reshape(tb, {out}));
  h = silu(group_norm(h, gn_groups(out), self.param(n + ".gn2.g"),
                      self.param(n + ".gn2.b")));
  h = conv2d(h, self.param(n + ".conv2.w"), self.param(n + ".conv2.b"), 1, 1);
  Tensor skip = x;
  if (in != out)
    skip = conv2d(x, self.param(n + ".skip.w"), self.param(n + ".skip.b"), 1, 0);
  return add(h, skip);
}

Tensor Denoiser::encode_text(const std::vector<int>& ids) const {
  auto& self = const_cast<Denoiser&>(*this);
  if (static_cast<int>(ids.size()) != cfg_.max_caption_len)
    throw std::invalid_argument("caption ids must have max_caption_len entries");
  for (int id : ids)
    if (id < 0 || id >= tok_.size())
      throw std::invalid_argument("token id out of range");
  const int len = cfg_.max_caption_len;
  Tensor x = add(embed_rows(self.param("txt.embed"), ids),
                 sinusoid_rows(len, cfg_.text_dim));
  std::vector<float> maskv(len, 0.0f);
  for (int i = 0; i < len; ++i)
    if (ids[i] == Tokenizer::kPad) maskv[i] = kMaskOff;
  Tensor mask = Tensor::from({len}, maskv);
  for (int b = 0; b < 2; ++b) {
    std::string n = "txt.b" + std::to_string(b);
    Tensor h = layer_norm(x, self.param(n + ".ln1.g"), self.param(n + ".ln1.b"));
    Tensor q = linear(h, self.param(n + ".wq.w"), self.param(n + ".wq.b"));
    Tensor k = linear(h, self.param(n + ".wk.w"), self.param(n + ".wk.b"));
    Tensor v = linear(h, self.param(n + ".wv.w"), self.param(n + ".wv.b"));
    Tensor a = attention(q, k, v, mask);
    x = add(x, linear(a, self.param(n + ".wo.w"), self.param(n + ".wo.b")));
    Tensor m = layer_norm(x, self.param(n + ".ln2.g"), self.param(n + ".ln2.b"));
    m = silu(linear(m, self.param(n + ".mlp1.w"), self.param(n + ".mlp1.b")));
    m = linear(m, self.param(n + ".mlp2.w"), self.param(n + ".mlp2.b"));
    x = add(x, m);
  }
  return x;
}

std::vector<Tensor> Denoiser::encode_condition(const Tensor& x_c) const {
  auto& self = const_cast<Denoiser&>(*this);
  if (!x_c.defined())
    return {self.param("cond.null16"), self.param("cond.null8")};
  if (x_c.dim(1) != cfg_.resolution)
    throw std::invalid_argument("condition image resolution mismatch");
  Tensor h = silu(conv2d(x_c, self.param("cond.conv0.w"),
                         self.param("cond.conv0.b"), 1, 1));
  Tensor f16 = silu(conv2d(avgpool2x(h), self.param("cond.conv1.w"),
                           self.param("cond.conv1.b"), 1, 1));
  Tensor f8 = silu(conv2d(avgpool2x(f16), self.param("cond.conv2.w"),
                          self.param("cond.conv2.b"), 1, 1));
  return {f16, f8};
}

Tensor Denoiser::attention_site(const std::string& n, const Tensor& x,
                                const Tensor& text_feat, const Tensor& text_mask,
                                const Tensor& cond_feat,
                                const std::vector<float>& pose_code) const {
  auto& self = const_cast<Denoiser&>(*this);
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor nc = chw_to_nc(x);
  if (index_.count(n + ".self.ln.g")) {
    Tensor s = layer_norm(nc, self.param(n + ".self.ln.g"),
                          self.param(n + ".self.ln.b"));
    Tensor q = linear(s, self.param(n + ".self.wq.w"), self.param(n + ".self.wq.b"));
    Tensor k = linear(s, self.param(n + ".self.wk.w"), self.param(n + ".self.wk.b"));
    Tensor v = linear(s, self.param(n + ".self.wv.w"), self.param(n + ".self.wv.b"));
    Tensor a = attention(q, k, v);
    nc = add(nc, linear(a, self.param(n + ".self.wo.w"),
                        self.param(n + ".self.wo.b")));
  }
  if (cfg_.text && text_feat.defined()) {
    Tensor s = layer_norm(nc, self.param(n + ".txt.ln.g"),
                          self.param(n + ".txt.ln.b"));
    Tensor q = linear(s, self.param(n + ".txt.wq.w"), self.param(n + ".txt.wq.b"));
    Tensor k = linear(text_feat, self.param(n + ".txt.wk.w"),
                      self.param(n + ".txt.wk.b"));
    Tensor v = linear(text_feat, self.param(n + ".txt.wv.w"),
                      self.param(n + ".txt.wv.b"));
    Tensor a = attention(q, k, v, text_mask);
    nc = add(nc, linear(a, self.param(n + ".txt.wo.w"),
                        self.param(n + ".txt.wo.b")));
  }
  if (cfg_.mechanism != Mechanism::Concat && cond_feat.defined()) {
    Tensor s = layer_norm(nc, self.param(n + ".img.ln.g"),
                          self.param(n + ".img.ln.b"));
    Tensor q = linear(s, self.param(n + ".img.wq.w"), self.param(n + ".img.wq.b"));
    Tensor k = linear(cond_feat, self.param(n + ".img.wk.w"),
                      self.param(n + ".img.wk.b"));
    Tensor v = linear(cond_feat, self.param(n + ".img.wv.w"),
                      self.param(n + ".img.wv.b"));
    if (cfg_.pose_token) {
      Tensor pc = Tensor::from({1, static_cast<int>(pose_code.size())}, pose_code);
      k = concat_rows(k, matmul(pc, self.param("pose." + n + ".kp")));
      v = concat_rows(v, matmul(pc, self.param("pose." + n + ".vp")));
    }
    Tensor a = attention(q, k, v);
    nc = add(nc, linear(a, self.param(n + ".img.wo.w"),
                        self.param(n + ".img.wo.b")));
  }
  return nc_to_chw(nc, c, h, w);
}

Tensor Denoiser::predict_noise(const Tensor& x_t, int t, const Tensor& x_c,
                               const RelativePose& pose,
                               const std::vector<int>& caption) const {
  auto& self = const_cast<Denoiser&>(*this);
  if (t < 1 || t > 1000)
    throw std::invalid_argument("timestep out of range [1, 1000]");
  if (x_t.rank() != 3 || x_t.dim(0) != 3 || x_t.dim(1) != cfg_.resolution ||
      x_t.dim(2) != cfg_.resolution)
    throw std::invalid_argument("x_t shape mismatch");
  if (x_c.defined() &&
      (x_c.rank() != 3 || x_c.dim(0) != 3 || x_c.dim(1) != cfg_.resolution))
    throw std::invalid_argument("x_c shape mismatch");

  Tensor temb = timestep_embedding(t, pose);
  std::vector<float> pose_code = frequency_encode(pose, cfg_.freq_bands);

  Tensor text_feat, text_mask;
  if (cfg_.text) {
    text_feat = encode_text(caption);
    std::vector<float> mv(cfg_.max_caption_len, 0.0f);
    for (int i = 0; i < cfg_.max_caption_len; ++i)
      if (caption[i] == Tokenizer::kPad) mv[i] = kMaskOff;
    text_mask = Tensor::from({cfg_.max_caption_len}, mv);
  }

  Tensor cond16, cond8;  // K/V contexts in row form
  if (cfg_.mechanism != Mechanism::Concat) {
    std::vector<Tensor> maps = encode_condition(x_c);
    if (cfg_.mechanism == Mechanism::GlobalToken) {
      Tensor tok = mean_rows(chw_to_nc(maps[1]));  // one pooled token
      cond16 = tok;
      cond8 = tok;
    } else {
      cond16 = chw_to_nc(maps[0]);
      cond8 = chw_to_nc(maps[1]);
    }
  }

  Tensor input = x_t;
  if (cfg_.mechanism == Mechanism::Concat) {
    Tensor ci = x_c.defined() ? x_c : self.param("cond.null_img");
    input = concat_channels(x_t, ci);
  }

  Tensor x0 = conv2d(input, self.param("in.conv.w"), self.param("in.conv.b"), 1, 1);
  Tensor e0 = resblock("enc0", x0, temb);
  Tensor e1 = resblock("enc1", avgpool2x(e0), temb);
  e1 = attention_site("site.enc16", e1, text_feat, text_mask, cond16, pose_code);
  Tensor e2 = resblock("enc2", avgpool2x(e1), temb);
  e2 = attention_site("site.enc8", e2, text_feat, text_mask, cond8, pose_code);
  Tensor m = resblock("mid1", e2, temb);
  m = attention_site("site.mid8", m, text_feat, text_mask, cond8, pose_code);
  m = resblock("mid2", m, temb);
  Tensor u1 = resblock("dec1", concat_channels(upsample2x(m), e1), temb);
  u1 = attention_site("site.dec16", u1, text_feat, text_mask, cond16, pose_code);
  Tensor u0 = resblock("dec0", concat_channels(upsample2x(u1), e0), temb);
  Tensor out = silu(group_norm(u0, gn_groups(u0.dim(0)), self.param("out.gn.g"),
                               self.param("out.gn.b")));
  return conv2d(out, self.param("out.conv.w"), self.param("out.conv.b"), 1, 1);
}

}  // namespace nvsd
