#include "dsvton/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>
#include <string>
#include <thread>

#include "dsvton/diffusion.hpp"
#include "dsvton/errors.hpp"
#include "dsvton/parallel.hpp"

namespace dsvton {

void NetworkConfig::validate() const {
  require(base_channels >= 1, "base_channels must be positive");
  require(depth >= 1, "depth must be positive");
  require(attn_level >= 0 && attn_level < depth, "attn_level must lie in [0, depth)");
  require(time_embed_dim >= 2 && time_embed_dim % 2 == 0, "time_embed_dim must be even and >= 2");
  require(latent_channels >= 1 && person_channels >= 1 && garment_channels >= 1,
          "channel counts must be positive");
  require(level_channels(attn_level) % 4 == 0,
          "attention-level channel count must be divisible by 4 (2-D positional encoding)");
}

const ParamTensor& ParamLayout::add(const std::string& name, const std::string& group, Index rows,
                                    Index cols) {
  require(index_.find(name) == index_.end(), "duplicate parameter tensor " + name);
  tensors_.push_back(ParamTensor{name, group, total_, rows, cols});
  index_[name] = tensors_.size() - 1;
  total_ += rows * cols;
  return tensors_.back();
}

const ParamTensor& ParamLayout::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter tensor " + name);
  return tensors_[it->second];
}

std::vector<std::string> ParamLayout::groups() const {
  std::vector<std::string> out;
  for (const auto& t : tensors_) {
    if (std::find(out.begin(), out.end(), t.group) == out.end()) out.push_back(t.group);
  }
  return out;
}

namespace {

std::string lvl(const char* prefix, int l, const char* suffix) {
  return std::string(prefix) + std::to_string(l) + suffix;
}

}  // namespace

ParamLayout build_layout(const NetworkConfig& cfg) {
  cfg.validate();
  ParamLayout layout;
  const Index E = cfg.time_embed_dim;
  layout.add("time.w1", "time_embed", E, E);
  layout.add("time.b1", "time_embed", 1, E);
  for (int l = 0; l < cfg.depth; ++l) {
    layout.add(lvl("time.proj", l, ".w"), "time_embed", E, cfg.level_channels(l));
    layout.add(lvl("time.proj", l, ".b"), "time_embed", 1, cfg.level_channels(l));
  }
  for (int l = 0; l < cfg.depth; ++l) {
    const Index cin = l == 0 ? cfg.in_channels() : cfg.level_channels(l - 1);
    const Index c = cfg.level_channels(l);
    layout.add(lvl("enc", l, ".in.w"), "encoder", 9 * cin, c);
    layout.add(lvl("enc", l, ".in.b"), "encoder", 1, c);
    layout.add(lvl("enc", l, ".res.w"), "encoder", 9 * c, c);
    layout.add(lvl("enc", l, ".res.b"), "encoder", 1, c);
  }
  const Index ca = cfg.level_channels(cfg.attn_level);
  layout.add("attn.q", "attention", ca, ca);
  layout.add("attn.k", "attention", ca, ca);
  layout.add("attn.v", "attention", ca, ca);
  layout.add("attn.o", "attention", ca, ca);
  layout.add("attn.o.b", "attention", 1, ca);
  for (int l = cfg.depth - 2; l >= 0; --l) {
    const Index cin = cfg.level_channels(l + 1) + cfg.level_channels(l);
    layout.add(lvl("dec", l, ".w"), "decoder", 9 * cin, cfg.level_channels(l));
    layout.add(lvl("dec", l, ".b"), "decoder", 1, cfg.level_channels(l));
  }
  layout.add("out.w", "output", 9 * cfg.level_channels(0), cfg.out_channels());
  layout.add("out.b", "output", 1, cfg.out_channels());
  for (int l = 0; l <= cfg.attn_level; ++l) {
    const Index cin = l == 0 ? cfg.garment_channels : cfg.level_channels(l - 1);
    const Index c = cfg.level_channels(l);
    layout.add(lvl("ref", l, ".in.w"), "reference", 9 * cin, c);
    layout.add(lvl("ref", l, ".in.b"), "reference", 1, c);
    layout.add(lvl("ref", l, ".res.w"), "reference", 9 * c, c);
    layout.add(lvl("ref", l, ".res.b"), "reference", 1, c);
  }
  return layout;
}

Eigen::Map<const RowMatrix> DenoiserParams::tensor(const std::string& name) const {
  const ParamTensor& t = layout.at(name);
  return Eigen::Map<const RowMatrix>(values.data() + t.offset, t.rows, t.cols);
}

Eigen::Map<RowMatrix> DenoiserParams::tensor(const std::string& name) {
  const ParamTensor& t = layout.at(name);
  return Eigen::Map<RowMatrix>(values.data() + t.offset, t.rows, t.cols);
}

DenoiserParams init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  DenoiserParams p;
  p.config = cfg;
  p.layout = build_layout(cfg);
  p.values = Eigen::VectorXd::Zero(p.layout.total());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const ParamTensor& t : p.layout.tensors()) {
    // Biases get a small spread, weights are fan-in scaled.
    const double scale = t.rows == 1 ? 0.01 : 1.0 / std::sqrt(static_cast<double>(t.rows));
    for (Index i = 0; i < t.size(); ++i) p.values(t.offset + i) = scale * normal(rng);
  }
  return p;
}

int worker_count() {
  if (const char* env = std::getenv("DSVTON_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

using Mat = RowMatrix;
using RowVec = Eigen::RowVectorXd;
using ConstMap = Eigen::Map<const Mat>;
using MutMap = Eigen::Map<Mat>;

struct Feature {
  Mat x;  // (h * w) x channels
  Index h = 0;
  Index w = 0;
};

Mat silu(const Mat& x) { return (x.array() / (1.0 + (-x.array()).exp())).matrix(); }

Mat silu_grad(const Mat& x) {
  const Eigen::ArrayXXd s = 1.0 / (1.0 + (-x.array()).exp());
  return (s * (1.0 + x.array() * (1.0 - s))).matrix();
}

Mat im2col(const Mat& in, Index h, Index w, int stride, Index& oh, Index& ow) {
  const Index c = in.cols();
  oh = (h - 1) / stride + 1;
  ow = (w - 1) / stride + 1;
  Mat cols = Mat::Zero(oh * ow, 9 * c);
  for (Index oy = 0; oy < oh; ++oy) {
    for (Index ox = 0; ox < ow; ++ox) {
      double* dst = cols.data() + (oy * ow + ox) * 9 * c;
      for (int ky = 0; ky < 3; ++ky) {
        const Index iy = oy * stride + ky - 1;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const Index ix = ox * stride + kx - 1;
          if (ix < 0 || ix >= w) continue;
          std::copy_n(in.data() + (iy * w + ix) * c, c, dst + (ky * 3 + kx) * c);
        }
      }
    }
  }
  return cols;
}

Mat col2im(const Mat& dcols, Index h, Index w, Index c, int stride, Index oh, Index ow) {
  Mat din = Mat::Zero(h * w, c);
  for (Index oy = 0; oy < oh; ++oy) {
    for (Index ox = 0; ox < ow; ++ox) {
      const double* src = dcols.data() + (oy * ow + ox) * 9 * c;
      for (int ky = 0; ky < 3; ++ky) {
        const Index iy = oy * stride + ky - 1;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const Index ix = ox * stride + kx - 1;
          if (ix < 0 || ix >= w) continue;
          double* dst = din.data() + (iy * w + ix) * c;
          const double* s = src + (ky * 3 + kx) * c;
          for (Index k = 0; k < c; ++k) dst[k] += s[k];
        }
      }
    }
  }
  return din;
}

struct ConvCache {
  Mat cols;
  Index in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  int stride = 1;
};

struct LevelCache {
  ConvCache in_conv;
  Mat pre_b;
  ConvCache res_conv;
  Mat r;
};

struct AttnCache {
  Mat x, kv, xp, kvp, q, k, v, a, o;
};

struct DecCache {
  ConvCache conv;
  Mat p;
  Index up_channels = 0;
};

struct ForwardCache {
  RowVec emb0, h1, g;
  std::vector<LevelCache> enc;
  AttnCache attn;
  std::vector<DecCache> dec;  // indexed by level
  ConvCache out_conv;
};

struct RefCache {
  std::vector<LevelCache> levels;
};

Mat positional_encoding(Index h, Index w, Index c) {
  const Index quarter = c / 4;
  Mat pe(h * w, c);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index k = 0; k < quarter; ++k) {
        const double freq = std::pow(64.0, -static_cast<double>(k) / static_cast<double>(quarter));
        const Index row = y * w + x;
        pe(row, 2 * k) = std::sin(static_cast<double>(y) * freq);
        pe(row, 2 * k + 1) = std::cos(static_cast<double>(y) * freq);
        pe(row, 2 * quarter + 2 * k) = std::sin(static_cast<double>(x) * freq);
        pe(row, 2 * quarter + 2 * k + 1) = std::cos(static_cast<double>(x) * freq);
      }
    }
  }
  return pe;
}

RowVec timestep_embedding(int t, Index dim) {
  const Index half = dim / 2;
  RowVec emb(dim);
  for (Index k = 0; k < half; ++k) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    emb(k) = std::sin(static_cast<double>(t) * freq);
    emb(half + k) = std::cos(static_cast<double>(t) * freq);
  }
  return emb;
}

Feature image_feature(const Image& img) { return Feature{img.pixels(), img.height(), img.width()}; }

class Net {
 public:
  explicit Net(const DenoiserParams& p) : p_(p), cfg_(p.config) {}

  ConstMap W(const std::string& name) const { return p_.tensor(name); }

  MutMap G(double* grad, const std::string& name) const {
    const ParamTensor& t = p_.layout.at(name);
    return MutMap(grad + t.offset, t.rows, t.cols);
  }

  Feature conv(const Feature& in, int stride, const std::string& name, ConvCache* cache) const {
    Feature out;
    Index oh = 0, ow = 0;
    Mat cols = im2col(in.x, in.h, in.w, stride, oh, ow);
    out.x.noalias() = cols * W(name + ".w");
    out.x.rowwise() += W(name + ".b").row(0);
    out.h = oh;
    out.w = ow;
    if (cache != nullptr) {
      cache->cols = std::move(cols);
      cache->in_h = in.h;
      cache->in_w = in.w;
      cache->out_h = oh;
      cache->out_w = ow;
      cache->stride = stride;
    }
    return out;
  }

  // Accumulates weight/bias gradients; returns the input gradient if asked.
  Mat conv_backward(const Mat& dout, const ConvCache& c, const std::string& name, double* grad,
                    bool need_input) const {
    G(grad, name + ".w").noalias() += c.cols.transpose() * dout;
    G(grad, name + ".b").row(0) += dout.colwise().sum();
    if (!need_input) return Mat();
    const ConstMap w = W(name + ".w");
    Mat dcols;
    dcols.noalias() = dout * w.transpose();
    return col2im(dcols, c.in_h, c.in_w, w.rows() / 9, c.stride, c.out_h, c.out_w);
  }

  Feature encode_level(const Feature& in, int l, const char* prefix, const RowVec* temb,
                       LevelCache* cache) const {
    const int stride = l == 0 ? 1 : 2;
    Feature a = conv(in, stride, lvl(prefix, l, ".in"), cache ? &cache->in_conv : nullptr);
    if (temb != nullptr) a.x.rowwise() += *temb;
    Feature b{silu(a.x), a.h, a.w};
    Feature r = conv(b, 1, lvl(prefix, l, ".res"), cache ? &cache->res_conv : nullptr);
    Feature e{b.x + silu(r.x), a.h, a.w};
    if (cache != nullptr) {
      cache->pre_b = std::move(a.x);
      cache->r = std::move(r.x);
    }
    return e;
  }

  Mat encode_level_backward(const Mat& de, int l, const char* prefix, const LevelCache& c,
                            double* grad, RowVec* dtemb, bool need_input) const {
    Mat dr = de.cwiseProduct(silu_grad(c.r));
    Mat db = de + conv_backward(dr, c.res_conv, lvl(prefix, l, ".res"), grad, true);
    Mat dpre = db.cwiseProduct(silu_grad(c.pre_b));
    if (dtemb != nullptr) *dtemb = dpre.colwise().sum();
    return conv_backward(dpre, c.in_conv, lvl(prefix, l, ".in"), grad, need_input);
  }

  Feature reference_forward(const Image& garment, RefCache* cache) const {
    require(garment.channels() == cfg_.garment_channels, "garment channel count mismatch");
    check_spatial(garment, "garment");
    if (cache != nullptr) cache->levels.resize(static_cast<std::size_t>(cfg_.attn_level + 1));
    Feature f = image_feature(garment);
    for (int l = 0; l <= cfg_.attn_level; ++l) {
      f = encode_level(f, l, "ref", nullptr,
                       cache ? &cache->levels[static_cast<std::size_t>(l)] : nullptr);
    }
    return f;
  }

  void reference_backward(const Mat& dref, const RefCache& cache, double* grad) const {
    Mat d = dref;
    for (int l = cfg_.attn_level; l >= 0; --l) {
      d = encode_level_backward(d, l, "ref", cache.levels[static_cast<std::size_t>(l)], grad,
                                nullptr, l > 0);
    }
  }

  Mat attention(const Mat& x, const Mat& ref, Index h, Index w, AttnCache* cache) const {
    const Index n = x.rows();
    const Index c = x.cols();
    const Mat pe = positional_encoding(h, w, c);
    Mat kv(n + ref.rows(), c);
    kv << x, ref;
    Mat kv_pe(n + ref.rows(), c);
    kv_pe << pe, pe;
    const Mat xp = x + pe;
    const Mat kvp = kv + kv_pe;
    Mat q, k, v;
    q.noalias() = xp * W("attn.q");
    k.noalias() = kvp * W("attn.k");
    v.noalias() = kv * W("attn.v");
    Mat s;
    s.noalias() = q * k.transpose();
    s *= 1.0 / std::sqrt(static_cast<double>(c));
    for (Index i = 0; i < s.rows(); ++i) {
      const double mx = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - mx).exp().matrix();
      s.row(i) /= s.row(i).sum();
    }
    Mat o;
    o.noalias() = s * v;
    Mat out = x;
    out.noalias() += o * W("attn.o");
    out.rowwise() += W("attn.o.b").row(0);
    if (cache != nullptr) {
      cache->x = x;
      cache->kv = std::move(kv);
      cache->xp = xp;
      cache->kvp = kvp;
      cache->q = std::move(q);
      cache->k = std::move(k);
      cache->v = std::move(v);
      cache->a = std::move(s);
      cache->o = std::move(o);
    }
    return out;
  }

  // Returns dx; writes the reference-feature gradient into dref.
  Mat attention_backward(const Mat& dout, const AttnCache& c, double* grad, Mat& dref) const {
    const Index n = c.x.rows();
    const double scale = 1.0 / std::sqrt(static_cast<double>(c.x.cols()));
    G(grad, "attn.o").noalias() += c.o.transpose() * dout;
    G(grad, "attn.o.b").row(0) += dout.colwise().sum();
    Mat d_o;
    d_o.noalias() = dout * W("attn.o").transpose();
    Mat da;
    da.noalias() = d_o * c.v.transpose();
    Mat dv;
    dv.noalias() = c.a.transpose() * d_o;
    const Eigen::VectorXd rowdot = (da.cwiseProduct(c.a)).rowwise().sum();
    Mat ds = c.a.cwiseProduct(da.colwise() - rowdot) * scale;
    Mat dq;
    dq.noalias() = ds * c.k;
    Mat dk;
    dk.noalias() = ds.transpose() * c.q;
    G(grad, "attn.q").noalias() += c.xp.transpose() * dq;
    G(grad, "attn.k").noalias() += c.kvp.transpose() * dk;
    G(grad, "attn.v").noalias() += c.kv.transpose() * dv;
    Mat dkv;
    dkv.noalias() = dk * W("attn.k").transpose();
    dkv.noalias() += dv * W("attn.v").transpose();
    Mat dx = dout;
    dx.noalias() += dq * W("attn.q").transpose();
    dx += dkv.topRows(n);
    dref = dkv.bottomRows(dkv.rows() - n);
    return dx;
  }

  Image forward(const Image& x_in, const Image& person, int t, const ReferenceFeatures::Site& ref,
                ForwardCache* cache) const {
    require(x_in.channels() == cfg_.latent_channels, "latent channel count mismatch");
    require(person.channels() == cfg_.person_channels, "person channel count mismatch");
    require(x_in.height() == person.height() && x_in.width() == person.width(),
            "latent and person resolution mismatch");
    check_spatial(x_in, "latent");

    const RowVec emb0 = timestep_embedding(t, cfg_.time_embed_dim);
    RowVec h1 = emb0 * W("time.w1");
    h1 += W("time.b1").row(0);
    const RowVec g = silu(h1);
    if (cache != nullptr) {
      cache->emb0 = emb0;
      cache->h1 = h1;
      cache->g = g;
      cache->enc.resize(static_cast<std::size_t>(cfg_.depth));
      cache->dec.resize(static_cast<std::size_t>(cfg_.depth));
    }

    Feature f;
    f.h = x_in.height();
    f.w = x_in.width();
    f.x.resize(x_in.height() * x_in.width(), cfg_.in_channels());
    f.x << x_in.pixels(), person.pixels();

    std::vector<Feature> skips(static_cast<std::size_t>(cfg_.depth));
    for (int l = 0; l < cfg_.depth; ++l) {
      RowVec temb = g * W(lvl("time.proj", l, ".w"));
      temb += W(lvl("time.proj", l, ".b")).row(0);
      f = encode_level(f, l, "enc", &temb,
                       cache ? &cache->enc[static_cast<std::size_t>(l)] : nullptr);
      if (l == cfg_.attn_level) {
        if (ref.height != f.h || ref.width != f.w ||
            ref.features.cols() != cfg_.level_channels(l)) {
          throw ValidationError("reference features do not match the attention site resolution");
        }
        f.x = attention(f.x, ref.features, f.h, f.w, cache ? &cache->attn : nullptr);
      }
      skips[static_cast<std::size_t>(l)] = f;
    }

    Feature d = skips.back();
    for (int l = cfg_.depth - 2; l >= 0; --l) {
      const Feature& skip = skips[static_cast<std::size_t>(l)];
      Feature cat;
      cat.h = skip.h;
      cat.w = skip.w;
      cat.x.resize(skip.h * skip.w, d.x.cols() + skip.x.cols());
      for (Index y = 0; y < skip.h; ++y) {
        for (Index x = 0; x < skip.w; ++x) {
          const Index row = y * skip.w + x;
          cat.x.row(row).head(d.x.cols()) = d.x.row((y / 2) * d.w + x / 2);
          cat.x.row(row).tail(skip.x.cols()) = skip.x.row(row);
        }
      }
      DecCache* dc = cache ? &cache->dec[static_cast<std::size_t>(l)] : nullptr;
      Feature p = conv(cat, 1, lvl("dec", l, ""), dc ? &dc->conv : nullptr);
      d = Feature{silu(p.x), p.h, p.w};
      if (dc != nullptr) {
        dc->p = std::move(p.x);
        dc->up_channels = cat.x.cols() - skip.x.cols();
      }
    }

    Feature out = conv(d, 1, "out", cache ? &cache->out_conv : nullptr);
    Image pred(x_in.height(), x_in.width(), cfg_.out_channels());
    pred.pixels() = std::move(out.x);
    if (!pred.all_finite()) throw NumericalError("predict_noise produced non-finite values");
    return pred;
  }

  void backward(const Mat& dpred, const ForwardCache& c, double* grad, Mat& dref) const {
    const int depth = cfg_.depth;
    std::vector<Mat> de(static_cast<std::size_t>(depth));
    std::vector<Index> hs(static_cast<std::size_t>(depth)), ws(static_cast<std::size_t>(depth));
    for (int l = 0; l < depth; ++l) {
      const ConvCache& in = c.enc[static_cast<std::size_t>(l)].in_conv;
      hs[static_cast<std::size_t>(l)] = in.out_h;
      ws[static_cast<std::size_t>(l)] = in.out_w;
      de[static_cast<std::size_t>(l)] =
          Mat::Zero(in.out_h * in.out_w, cfg_.level_channels(l));
    }

    Mat dd = conv_backward(dpred, c.out_conv, "out", grad, true);
    for (int l = 0; l <= depth - 2; ++l) {
      const DecCache& dc = c.dec[static_cast<std::size_t>(l)];
      Mat dp = dd.cwiseProduct(silu_grad(dc.p));
      Mat dcat = conv_backward(dp, dc.conv, lvl("dec", l, ""), grad, true);
      const Index cu = dc.up_channels;
      de[static_cast<std::size_t>(l)] += dcat.rightCols(dcat.cols() - cu);
      const Index h = hs[static_cast<std::size_t>(l)], w = ws[static_cast<std::size_t>(l)];
      const Index hn = hs[static_cast<std::size_t>(l + 1)], wn = ws[static_cast<std::size_t>(l + 1)];
      Mat dnext = Mat::Zero(hn * wn, cu);
      for (Index y = 0; y < h; ++y) {
        for (Index x = 0; x < w; ++x) {
          dnext.row((y / 2) * wn + x / 2) += dcat.row(y * w + x).head(cu);
        }
      }
      dd = std::move(dnext);
    }
    de[static_cast<std::size_t>(depth - 1)] += dd;

    RowVec dg = RowVec::Zero(cfg_.time_embed_dim);
    for (int l = depth - 1; l >= 0; --l) {
      Mat& d = de[static_cast<std::size_t>(l)];
      if (l == cfg_.attn_level) d = attention_backward(d, c.attn, grad, dref);
      RowVec dtemb;
      Mat din = encode_level_backward(d, l, "enc", c.enc[static_cast<std::size_t>(l)], grad,
                                      &dtemb, l > 0);
      if (l > 0) de[static_cast<std::size_t>(l - 1)] += din;
      G(grad, lvl("time.proj", l, ".w")).noalias() += c.g.transpose() * dtemb;
      G(grad, lvl("time.proj", l, ".b")).row(0) += dtemb;
      dg.noalias() += dtemb * W(lvl("time.proj", l, ".w")).transpose();
    }
    const RowVec dh1 = dg.cwiseProduct(silu_grad(c.h1));
    G(grad, "time.w1").noalias() += c.emb0.transpose() * dh1;
    G(grad, "time.b1").row(0) += dh1;
  }

 private:
  void check_spatial(const Image& img, const char* what) const {
    const int m = cfg_.spatial_multiple();
    if (img.height() < m || img.width() < m || img.height() % m != 0 || img.width() % m != 0) {
      throw ValidationError(std::string(what) + " resolution " + shape_string(img) +
                            " must be a positive multiple of " + std::to_string(m));
    }
  }

  const DenoiserParams& p_;
  const NetworkConfig& cfg_;
};

void check_params(const DenoiserParams& params) {
  require(params.values.size() == params.layout.total(), "parameter vector does not match layout");
}

struct ItemResult {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

double item_loss(const Net& net, const TrainItem& item, const DenoiserParams& params,
                 Eigen::VectorXd* grad, double grad_scale) {
  require_same_shape(item.x_in, item.target, "loss_and_grad target");
  if (grad == nullptr) {
    const Feature ref = net.reference_forward(item.garment, nullptr);
    const Image pred = net.forward(item.x_in, item.person, item.t,
                                   ReferenceFeatures::Site{ref.x, ref.h, ref.w}, nullptr);
    return mse_loss(pred, item.target);
  }
  RefCache rc;
  const Feature ref = net.reference_forward(item.garment, &rc);
  ForwardCache fc;
  const Image pred =
      net.forward(item.x_in, item.person, item.t, ReferenceFeatures::Site{ref.x, ref.h, ref.w}, &fc);
  const double n = static_cast<double>(pred.size());
  const Mat diff = pred.pixels() - item.target.pixels();
  *grad = Eigen::VectorXd::Zero(params.size());
  Mat dref;
  net.backward(diff * (2.0 * grad_scale / n), fc, grad->data(), dref);
  net.reference_backward(dref, rc, grad->data());
  return diff.squaredNorm() / n;
}

}  // namespace

ReferenceFeatures reference_encode(const Image& garment, const DenoiserParams& params) {
  check_params(params);
  Net net(params);
  Feature f = net.reference_forward(garment, nullptr);
  if (!f.x.allFinite()) throw NumericalError("reference features are non-finite");
  ReferenceFeatures ref;
  ref.sites.push_back(ReferenceFeatures::Site{std::move(f.x), f.h, f.w});
  return ref;
}

Image predict_noise(const Image& x_in, const Image& person, int t, const ReferenceFeatures& ref,
                    const DenoiserParams& params) {
  check_params(params);
  require(ref.sites.size() == 1, "expected exactly one reference attention site");
  return Net(params).forward(x_in, person, t, ref.sites.front(), nullptr);
}

LossAndGrad loss_and_grad(const std::vector<TrainItem>& batch, const DenoiserParams& params) {
  require(!batch.empty(), "loss_and_grad needs a non-empty batch");
  check_params(params);
  const Net net(params);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<ItemResult> results(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    results[i].loss = item_loss(net, batch[i], params, &results[i].grad, inv_b);
  });
  LossAndGrad out;
  out.grad = Eigen::VectorXd::Zero(params.size());
  for (const ItemResult& r : results) {
    out.loss += r.loss;
    out.grad += r.grad;
  }
  out.loss *= inv_b;
  if (!std::isfinite(out.loss)) throw NumericalError("loss is non-finite");
  if (!out.grad.allFinite()) throw NumericalError("gradient is non-finite");
  return out;
}

double batch_loss(const std::vector<TrainItem>& batch, const DenoiserParams& params) {
  require(!batch.empty(), "batch_loss needs a non-empty batch");
  check_params(params);
  const Net net(params);
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(),
               [&](std::size_t i) { losses[i] = item_loss(net, batch[i], params, nullptr, 1.0); });
  double total = 0.0;
  for (double l : losses) total += l;
  total /= static_cast<double>(batch.size());
  if (!std::isfinite(total)) throw NumericalError("loss is non-finite");
  return total;
}

void adamw_step(DenoiserParams& params, const Eigen::VectorXd& grads, AdamState& state, double lr,
                double weight_decay) {
  require(grads.size() == params.size(), "adamw_step: gradient size mismatch");
  require(state.m.size() == params.size() && state.v.size() == params.size(),
          "adamw_step: optimizer state size mismatch");
  require(lr > 0.0 && std::isfinite(lr), "adamw_step: learning rate must be positive");
  require(weight_decay >= 0.0, "adamw_step: weight decay must be nonnegative");
  if (!grads.allFinite()) throw NumericalError("adamw_step: non-finite gradient");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseAbs2();
  params.values *= (1.0 - lr * weight_decay);
  params.values.array() -=
      lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + state.eps);
}

GradientCheckReport gradient_check(const DenoiserParams& params, const std::vector<TrainItem>& batch,
                                   int n_coords, double fd_eps, std::uint64_t seed,
                                   const GradientFault& fault) {
  require(n_coords >= 1, "gradient_check needs n_coords >= 1");
  require(fd_eps > 0.0, "gradient_check needs fd_eps > 0");
  LossAndGrad analytic = loss_and_grad(batch, params);
  if (!fault.group.empty()) {
    bool found = false;
    for (const ParamTensor& t : params.layout.tensors()) {
      if (t.group != fault.group) continue;
      analytic.grad.segment(t.offset, t.size()) *= fault.scale;
      found = true;
    }
    require(found, "fault injection: unknown layer group " + fault.group);
  }

  const auto& tensors = params.layout.tensors();
  const int n_tensors = static_cast<int>(tensors.size());
  const int per_tensor = std::max(1, n_coords / n_tensors);
  const int remainder = n_coords > n_tensors ? n_coords % n_tensors : 0;

  GradientCheckReport report;
  for (const std::string& g : params.layout.groups()) {
    report.group_max_rel_error[g] = 0.0;
    report.group_coords[g] = 0;
  }
  std::mt19937_64 rng(seed);
  DenoiserParams probe = params;
  for (int ti = 0; ti < n_tensors; ++ti) {
    const ParamTensor& t = tensors[static_cast<std::size_t>(ti)];
    const int count = per_tensor + (ti < remainder ? 1 : 0);
    std::uniform_int_distribution<Index> pick(0, t.size() - 1);
    for (int k = 0; k < count; ++k) {
      const Index idx = t.offset + pick(rng);
      const double original = probe.values(idx);
      probe.values(idx) = original + fd_eps;
      const double lp = batch_loss(batch, probe);
      probe.values(idx) = original - fd_eps;
      const double lm = batch_loss(batch, probe);
      probe.values(idx) = original;
      const double fd = (lp - lm) / (2.0 * fd_eps);
      const double a = analytic.grad(idx);
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-12});
      report.group_max_rel_error[t.group] = std::max(report.group_max_rel_error[t.group], rel);
      report.group_coords[t.group] += 1;
      report.max_rel_error = std::max(report.max_rel_error, rel);
    }
  }
  return report;
}

}  // namespace dsvton
