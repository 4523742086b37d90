#include "mnm/model/model.h"

#include <algorithm>
#include <cmath>
#include <memory>

#include "mnm/common/error.h"
#include "mnm/geometry/box_ops.h"
#include "mnm/numerics/ops.h"

namespace mnm::model {
namespace {

// Prior probability of the objectness head at initialization.
constexpr double kObjectnessPrior = 0.01;
// Regression output weights start near zero so early stages barely move the
// whole-image proposals.
constexpr double kRegressionInitScale = 0.01;

Tensor Column(const Tensor& x) {
  return ops::Reshape(x, {x.dim(0)});
}

// Normalizes every channel of an [H, W, C] map over its spatial positions.
// Unlike a per-pixel norm this keeps where a channel fires strongly.
Tensor ChannelNorm(const Tensor& x) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const Tensor rows = ops::Transpose(ops::Reshape(x, {h * w, c}));
  const Tensor normed =
      ops::LayerNorm(rows, Tensor::Full({h * w}, 1.0), Tensor::Zeros({h * w}));
  return ops::Reshape(ops::Transpose(normed), {h, w, c});
}

}  // namespace

Tensor ImageTensor(const synth::Image& image) {
  std::vector<double> values(image.pixels.begin(), image.pixels.end());
  return Tensor::FromVector({image.height, image.width, 1}, std::move(values));
}

Backbone::Backbone(ParamStore& store, const std::string& prefix, std::size_t dim,
                   std::mt19937_64& rng) {
  const std::size_t widths[4] = {1, dim / 4, dim / 2, dim};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string name = prefix + ".block" + std::to_string(i);
    const std::size_t cin = widths[i], cout = widths[i + 1];
    Block block;
    block.weight = store.AddUniform(name + ".weight", {3, 3, cin, cout}, 9 * cin, rng);
    blocks_.push_back(std::move(block));
  }
}

Tensor Backbone::operator()(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(2) != 1) {
    throw ShapeError("backbone expects [H, W, 1], got " + ShapeToString(image.shape()));
  }
  if (image.dim(0) % kFeatureStride != 0 || image.dim(1) % kFeatureStride != 0) {
    throw ShapeError("backbone: image " + ShapeToString(image.shape()) +
                     " is not divisible by " + std::to_string(kFeatureStride));
  }
  Tensor x = image;
  for (const Block& b : blocks_) {
    const std::size_t c = b.weight.dim(3);
    x = ops::Relu(ChannelNorm(ops::Conv2d(x, b.weight, Tensor::Zeros({c}), 2, 1)));
  }
  return x;
}

Tensor RoiAlign(const Tensor& features, const std::vector<BBox>& boxes,
                std::size_t size, std::size_t stride) {
  if (features.rank() != 3) {
    throw ShapeError("roi_align expects [H, W, D], got " + ShapeToString(features.shape()));
  }
  const std::size_t hf = features.dim(0), wf = features.dim(1), d = features.dim(2);
  const std::size_t n = boxes.size(), cells = size * size;

  // Four (offset, weight) taps per sample, shared with the backward pass.
  struct Tap {
    std::size_t offset[4];
    double weight[4];
  };
  auto taps = std::make_shared<std::vector<Tap>>(n * cells);
  auto axis = [stride](double coord, std::size_t extent, std::size_t& lo,
                       std::size_t& hi, double& frac) {
    double u = coord / static_cast<double>(stride) - 0.5;
    u = std::clamp(u, 0.0, static_cast<double>(extent - 1));
    lo = static_cast<std::size_t>(std::floor(u));
    hi = std::min(lo + 1, extent - 1);
    frac = u - static_cast<double>(lo);
  };
  for (std::size_t k = 0; k < n; ++k) {
    const BBox& b = boxes[k];
    const double cw = b.width() / static_cast<double>(size);
    const double ch = b.height() / static_cast<double>(size);
    for (std::size_t sy = 0; sy < size; ++sy) {
      std::size_t y0, y1;
      double fy;
      axis(b.y1 + (static_cast<double>(sy) + 0.5) * ch, hf, y0, y1, fy);
      for (std::size_t sx = 0; sx < size; ++sx) {
        std::size_t x0, x1;
        double fx;
        axis(b.x1 + (static_cast<double>(sx) + 0.5) * cw, wf, x0, x1, fx);
        Tap& t = (*taps)[k * cells + sy * size + sx];
        t.offset[0] = (y0 * wf + x0) * d;
        t.offset[1] = (y0 * wf + x1) * d;
        t.offset[2] = (y1 * wf + x0) * d;
        t.offset[3] = (y1 * wf + x1) * d;
        t.weight[0] = (1 - fy) * (1 - fx);
        t.weight[1] = (1 - fy) * fx;
        t.weight[2] = fy * (1 - fx);
        t.weight[3] = fy * fx;
      }
    }
  }

  std::vector<double> out(n * cells * d, 0.0);
  const double* f = features.data().data();
  for (std::size_t s = 0; s < taps->size(); ++s) {
    const Tap& t = (*taps)[s];
    double* o = out.data() + s * d;
    for (int j = 0; j < 4; ++j) {
      if (t.weight[j] == 0) continue;
      const double* src = f + t.offset[j];
      for (std::size_t c = 0; c < d; ++c) o[c] += t.weight[j] * src[c];
    }
  }
  return MakeResult(
      {n, cells, d}, std::move(out), {features},
      [taps, d](Node& self) {
        auto& g = self.parents[0]->EnsureGrad();
        for (std::size_t s = 0; s < taps->size(); ++s) {
          const Tap& t = (*taps)[s];
          const double* go = self.grad.data() + s * d;
          for (int j = 0; j < 4; ++j) {
            if (t.weight[j] == 0) continue;
            double* dst = g.data() + t.offset[j];
            for (std::size_t c = 0; c < d; ++c) dst[c] += t.weight[j] * go[c];
          }
        }
      },
      "roi_align");
}

CrossViewAttention::CrossViewAttention(ParamStore& store, const std::string& prefix,
                                       std::size_t dim, std::size_t heads,
                                       std::mt19937_64& rng)
    : attention_(store, prefix + ".attention", dim, heads, rng),
      norm_(store, prefix + ".norm", dim) {
  // Zero output projection: the views start independent and the exchange is
  // learned. Random init adds noise on par with the proposal features and
  // stalls box learning.
  Dense& out = attention_.output_proj();
  for (double& w : out.weight().mutable_data()) w = 0;
  for (double& b : out.bias().mutable_data()) b = 0;
}

std::pair<Tensor, Tensor> CrossViewAttention::operator()(
    const Tensor& cc, const Tensor& mlo, double dropout, std::mt19937_64* rng) const {
  if (cc.shape() != mlo.shape()) {
    throw ShapeError("cross-view attention: cc " + ShapeToString(cc.shape()) +
                     " vs mlo " + ShapeToString(mlo.shape()));
  }
  Tensor new_cc = norm_(ops::Add(cc, ops::Dropout(attention_(cc, mlo, mlo), dropout, rng)));
  Tensor new_mlo = norm_(ops::Add(mlo, ops::Dropout(attention_(mlo, cc, cc), dropout, rng)));
  return {new_cc, new_mlo};
}

DynamicConv::DynamicConv(ParamStore& store, const std::string& prefix, std::size_t dim,
                         std::size_t bottleneck, std::size_t roi_cells,
                         std::mt19937_64& rng)
    : dim_(dim),
      bottleneck_(bottleneck),
      generator_(store, prefix + ".generator", dim, 2 * dim * bottleneck, rng),
      norm1_(store, prefix + ".norm1", bottleneck),
      norm2_(store, prefix + ".norm2", dim),
      projection_(store, prefix + ".projection", roi_cells * dim, dim, rng),
      norm3_(store, prefix + ".norm3", dim) {}

Tensor DynamicConv::operator()(const Tensor& proposals, const Tensor& rois) const {
  if (proposals.rank() != 2 || rois.rank() != 3 || proposals.dim(0) != rois.dim(0) ||
      proposals.dim(1) != dim_ || rois.dim(2) != dim_) {
    throw ShapeError("dynamic_conv: proposals " + ShapeToString(proposals.shape()) +
                     ", rois " + ShapeToString(rois.shape()));
  }
  const std::size_t n = proposals.dim(0), cells = rois.dim(1);
  const std::size_t block = dim_ * bottleneck_;
  const Tensor params = generator_(proposals);
  const Tensor first = ops::Reshape(ops::SliceColumns(params, 0, block), {n, dim_, bottleneck_});
  const Tensor second = ops::Reshape(ops::SliceColumns(params, block, block), {n, bottleneck_, dim_});
  Tensor x = ops::Relu(norm1_(ops::BatchMatMul(rois, first)));
  x = ops::Relu(norm2_(ops::BatchMatMul(x, second)));
  x = ops::Reshape(x, {n, cells * dim_});
  return ops::Relu(norm3_(projection_(x)));
}

DualHead::DualHead(ParamStore& store, const std::string& prefix, std::size_t dim,
                   std::mt19937_64& rng)
    : objectness_(store, prefix + ".objectness", dim, 1, rng),
      malignancy_(store, prefix + ".malignancy", dim, 1, rng) {
  const double prior_bias = -std::log((1 - kObjectnessPrior) / kObjectnessPrior);
  objectness_.bias().mutable_data()[0] = prior_bias;
  malignancy_.bias().mutable_data()[0] = 0.0;
}

std::pair<Tensor, Tensor> DualHead::operator()(const Tensor& h) const {
  Tensor o = Column(objectness_(h));
  Tensor m = ops::Sub(o, ops::Softplus(Column(malignancy_(h))));
  return {o, m};
}

std::vector<BBox> HeadOutput::ClippedBoxes(double width, double height) const {
  std::vector<BBox> out;
  out.reserve(boxes.dim(0));
  for (std::size_t r = 0; r < boxes.dim(0); ++r) {
    const BBox raw{boxes[r * 4], boxes[r * 4 + 1], boxes[r * 4 + 2], boxes[r * 4 + 3]};
    out.push_back(ClipToImage(raw, width, height));
  }
  return out;
}

Model::Model(const ModelConfig& config) : config_(config) {
  config_.ValidateShapes();
  std::mt19937_64 rng(config_.init_seed);
  const std::size_t n = config_.num_proposals, d = config_.dim;
  backbone_ = Backbone(store_, "backbone", d, rng);

  std::vector<double> whole_image;
  for (std::size_t i = 0; i < n; ++i) whole_image.insert(whole_image.end(), {0.5, 0.5, 1.0, 1.0});
  proposal_boxes_ = store_.Add("proposals.boxes", Tensor::FromVector({n, 4}, whole_image));
  proposal_features_ = store_.AddNormal("proposals.features", {n, d}, 0.1, rng);

  const std::size_t cells = config_.roi_size * config_.roi_size;
  for (std::size_t s = 0; s < config_.stages; ++s) {
    const std::string p = "stage" + std::to_string(s);
    Stage st;
    st.self_attention = MultiHeadAttention(store_, p + ".self_attention", d, config_.heads, rng);
    st.self_norm = Norm(store_, p + ".self_norm", d);
    st.cross_view = CrossViewAttention(store_, p + ".cross_view", d, config_.heads, rng);
    st.dynamic_conv = DynamicConv(store_, p + ".dynamic_conv", d, config_.dynamic_dim, cells, rng);
    st.dynamic_norm = Norm(store_, p + ".dynamic_norm", d);
    st.ffn_in = Dense(store_, p + ".ffn_in", d, config_.ffn_multiplier * d, rng);
    st.ffn_out = Dense(store_, p + ".ffn_out", config_.ffn_multiplier * d, d, rng);
    st.ffn_norm = Norm(store_, p + ".ffn_norm", d);
    st.dual_head = DualHead(store_, p + ".head", d, rng);
    st.regression_hidden = Dense(store_, p + ".regression_hidden", d, d, rng);
    st.regression_norm = Norm(store_, p + ".regression_norm", d);
    st.regression_out = Dense(store_, p + ".regression_out", d, 4, rng);
    for (double& w : st.regression_out.weight().mutable_data()) w *= kRegressionInitScale;
    for (double& b : st.regression_out.bias().mutable_data()) b = 0;
    stages_.push_back(std::move(st));
  }
  gap_ = Dense(store_, "gap", d, 1, rng);
}

Tensor Model::SelfAttend(const Stage& stage, const Tensor& h, std::mt19937_64* rng) const {
  return stage.self_norm(ops::Add(h, ops::Dropout(stage.self_attention(h, h, h), config_.dropout, rng)));
}

HeadOutput Model::Finish(const Stage& stage, const Tensor& h, const Tensor& features,
                         const Tensor& anchors, const std::vector<BBox>& crop_boxes,
                         std::mt19937_64* rng) const {
  const double p = config_.dropout;
  const Tensor rois = RoiAlign(features, crop_boxes, config_.roi_size);
  Tensor x = stage.dynamic_norm(ops::Add(h, ops::Dropout(stage.dynamic_conv(h, rois), p, rng)));
  const Tensor ffn = stage.ffn_out(ops::Relu(stage.ffn_in(x)));
  x = stage.ffn_norm(ops::Add(x, ops::Dropout(ffn, p, rng)));

  HeadOutput out;
  out.features = x;
  std::tie(out.objectness, out.malignancy) = stage.dual_head(x);
  const Tensor deltas = stage.regression_out(
      ops::Relu(stage.regression_norm(stage.regression_hidden(x))));
  out.boxes = box_ops::ApplyDeltas(anchors, deltas);
  return out;
}

Tensor Model::ImageScore(const HeadOutput& head, bool dual_heads) const {
  const Tensor probs = ops::Sigmoid(dual_heads ? head.malignancy : head.objectness);
  if (config_.mil_scheme != MilScheme::kGap) return MilPool(probs, config_.mil_scheme);
  return MilPool(probs, MilScheme::kGap, ops::Reshape(gap_(ops::MeanRows(head.features)), {}));
}

BreastForward Model::Forward(const synth::Image& cc, const synth::Image& mlo,
                             const ForwardOptions& options) const {
  if (cc.height != mlo.height || cc.width != mlo.width) {
    throw ShapeError("views differ in size");
  }
  const double width = static_cast<double>(cc.width);
  const double height = static_cast<double>(cc.height);
  std::mt19937_64* rng = options.dropout_rng;

  struct ViewState {
    Tensor features, h, anchors;
    std::vector<BBox> crops;
    ViewForward out;
  };
  ViewState views[2];
  views[0].features = backbone_(ImageTensor(cc));
  views[1].features = backbone_(ImageTensor(mlo));
  const Tensor initial = box_ops::NormalizedCxcywhToBoxes(proposal_boxes_, width, height);
  std::vector<BBox> initial_crops;
  for (const BBox& b : box_ops::ToBoxes(initial)) {
    initial_crops.push_back(ClipToImage(b, width, height));
  }
  for (ViewState& v : views) {
    v.h = proposal_features_;
    v.anchors = initial;
    v.crops = initial_crops;
  }

  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const Stage& stage = stages_[s];
    for (ViewState& v : views) v.h = SelfAttend(stage, v.h, rng);
    if (options.multi_view) {
      std::tie(views[0].h, views[1].h) =
          stage.cross_view(views[0].h, views[1].h, config_.dropout, rng);
    }
    for (std::size_t vi = 0; vi < 2; ++vi) {
      ViewState& v = views[vi];
      if (options.crops != nullptr) {
        const std::size_t slot = 2 * s + vi;
        if (options.replay_crops) {
          if (slot >= options.crops->size()) throw ShapeError("crop replay is too short");
          v.crops = (*options.crops)[slot];
          if (s > 0) v.anchors = box_ops::FromBoxes(v.crops);
        } else {
          options.crops->push_back(v.crops);
        }
      }
      HeadOutput head = Finish(stage, v.h, v.features, v.anchors, v.crops, rng);
      v.h = head.features;
      v.crops = head.ClippedBoxes(width, height);
      v.anchors = box_ops::FromBoxes(v.crops);
      if (options.all_stage_scores) {
        v.out.stage_image_scores.push_back(ImageScore(head, options.dual_heads));
      }
      v.out.stages.push_back(std::move(head));
    }
  }

  BreastForward result;
  for (ViewState& v : views) {
    v.out.image_score = options.all_stage_scores ? v.out.stage_image_scores.back()
                                                 : ImageScore(v.out.stages.back(), options.dual_heads);
  }
  result.cc = std::move(views[0].out);
  result.mlo = std::move(views[1].out);
  result.breast_score = ops::Scale(ops::Add(result.cc.image_score, result.mlo.image_score), 0.5);
  return result;
}

Tensor NoisyOr(const Tensor& probs) {
  if (probs.rank() != 1 || probs.numel() == 0) {
    throw ShapeError("noisy_or expects a nonempty vector, got " + ShapeToString(probs.shape()));
  }
  const std::size_t n = probs.numel();
  // prefix[i] = prod_{j<i} (1 - p_j), suffix[i] = prod_{j>=i} (1 - p_j)
  std::vector<double> prefix(n + 1, 1.0), suffix(n + 1, 1.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] * (1 - probs[i]);
  for (std::size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] * (1 - probs[i]);
  // Same value as 1 - prefix[n], accumulated from the largest probability up
  // so that rounding can never put it below the max.
  const std::size_t top = static_cast<std::size_t>(
      std::max_element(probs.data().begin(), probs.data().end()) - probs.data().begin());
  double value = probs[top];
  for (std::size_t i = 0; i < n; ++i) {
    if (i != top) value += probs[i] * (1 - value);
  }
  return MakeResult(
      {}, {value}, {probs},
      [prefix = std::move(prefix), suffix = std::move(suffix)](Node& self) {
        auto& g = self.parents[0]->EnsureGrad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] += self.grad[0] * prefix[i] * suffix[i + 1];
        }
      },
      "noisy_or");
}

Tensor MilPool(const Tensor& probs, MilScheme scheme, const Tensor& gap_logit) {
  switch (scheme) {
    case MilScheme::kNoisyOr: return NoisyOr(probs);
    case MilScheme::kMax: return ops::Max(probs);
    case MilScheme::kMean: return ops::Mean(probs);
    case MilScheme::kGap:
      if (!gap_logit.defined()) throw ConfigError("gap pooling needs a logit");
      return ops::Sigmoid(gap_logit);
  }
  throw ConfigError("unknown mil scheme");
}

double BreastScore(double cc, double mlo) { return 0.5 * (cc + mlo); }

double ExamScore(double left, double right) { return std::max(left, right); }

}  // namespace mnm::model
