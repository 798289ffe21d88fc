#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sckan/conv3d.hpp"
#include "sckan/gradcheck.hpp"
#include "sckan/rng.hpp"
#include "sckan/tensor.hpp"
#include "sckan/volume.hpp"

namespace sckan {

// Three-level 3D encoder-decoder (channels 8 -> 16 -> 32 -> 16 -> 8) with
// trilinear down/up sampling and a 1x1x1 classifier head. Decoder stage 2
// (half resolution, 16 channels) is the default feature tap for prototype
// extraction.
struct SegNetParams {
  Tensor enc1_w, enc1_b;  // 1 -> 8, full res
  Tensor enc2_w, enc2_b;  // 8 -> 16, 1/2
  Tensor bott_w, bott_b;  // 16 -> 32, 1/4
  Tensor dec2_w, dec2_b;  // 32 -> 16, 1/4 -> upsampled to 1/2
  Tensor dec1_w, dec1_b;  // 16 -> 8, 1/2 -> upsampled to full
  Tensor head_w, head_b;  // 8 -> |C| per voxel

  static SegNetParams init(Rng& rng) {
    SegNetParams p;
    auto conv = [&](int cin, int cout, Tensor& w, Tensor& b) {
      w = Tensor::param_normal({cout, cin, 3, 3, 3}, rng, std::sqrt(2.0 / (cin * 27.0)));
      b = Tensor::param(Shape{cout}, std::vector<double>(static_cast<std::size_t>(cout), 0.0));
    };
    conv(1, 8, p.enc1_w, p.enc1_b);
    conv(8, 16, p.enc2_w, p.enc2_b);
    conv(16, 32, p.bott_w, p.bott_b);
    conv(32, 16, p.dec2_w, p.dec2_b);
    conv(16, 8, p.dec1_w, p.dec1_b);
    p.head_w = Tensor::param_normal({kNumClasses, 8}, rng, std::sqrt(2.0 / 8.0));
    p.head_b = Tensor::param(Shape{kNumClasses}, std::vector<double>(kNumClasses, 0.0));
    return p;
  }

  std::vector<NamedParam> named() const {
    return {{"enc1_w", enc1_w}, {"enc1_b", enc1_b}, {"enc2_w", enc2_w}, {"enc2_b", enc2_b},
            {"bott_w", bott_w}, {"bott_b", bott_b}, {"dec2_w", dec2_w}, {"dec2_b", dec2_b},
            {"dec1_w", dec1_w}, {"dec1_b", dec1_b}, {"head_w", head_w}, {"head_b", head_b}};
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& np : named()) out.push_back(np.tensor);
    return out;
  }

  // Detached copy whose tensors never record gradients.
  SegNetParams clone_detached() const {
    SegNetParams c = *this;
    for (Tensor* t : {&c.enc1_w, &c.enc1_b, &c.enc2_w, &c.enc2_b, &c.bott_w, &c.bott_b,
                      &c.dec2_w, &c.dec2_b, &c.dec1_w, &c.dec1_b, &c.head_w, &c.head_b})
      *t = t->detach();
    return c;
  }
};

struct SegOutput {
  Tensor logits;    // [|C|, H, W, Z]
  Tensor features;  // tap level 2: [16, H/2, W/2, Z/2]; tap level 1: [8, H, W, Z]
};

// volume: [1,H,W,Z] with H,W,Z divisible by 4.
inline SegOutput seg_forward(const Tensor& volume, const SegNetParams& p, int tap_level = 2) {
  require(volume.shape().size() == 4 && volume.shape()[0] == 1,
          "seg_forward: input must be [1,H,W,Z]");
  require(tap_level == 1 || tap_level == 2, "seg_forward: tap_level must be 1 or 2");
  for (int a = 1; a <= 3; ++a)
    require(volume.shape()[static_cast<std::size_t>(a)] % 4 == 0,
            "seg_forward: spatial dims must be divisible by 4, got " + shape_str(volume.shape()));

  Tensor e1 = silu(conv3d(volume, p.enc1_w, p.enc1_b));
  Tensor e2 = silu(conv3d(downsample2x(e1), p.enc2_w, p.enc2_b));
  Tensor e3 = silu(conv3d(downsample2x(e2), p.bott_w, p.bott_b));
  Tensor d2 = upsample2x(silu(conv3d(e3, p.dec2_w, p.dec2_b)));
  Tensor d1 = upsample2x(silu(conv3d(d2, p.dec1_w, p.dec1_b)));
  SegOutput out;
  out.logits = conv1x1(d1, p.head_w, p.head_b);
  out.features = tap_level == 2 ? d2 : d1;
  return out;
}

inline int feature_dim(int tap_level) { return tap_level == 2 ? 16 : 8; }

// --- Mean-Teacher -------------------------------------------------------------

struct TeacherState {
  SegNetParams params;  // never touched by the optimizer, never records grads
  double decay = 0.99;

  static TeacherState init_from(const SegNetParams& student, double decay) {
    TeacherState t;
    t.params = student.clone_detached();
    t.decay = decay;
    return t;
  }
};

// theta_t <- decay * theta_t + (1 - decay) * theta_s, elementwise, exactly.
inline void ema_update(TeacherState& teacher, const SegNetParams& student) {
  auto tn = teacher.params.named();
  auto sn = student.named();
  for (std::size_t i = 0; i < tn.size(); ++i) {
    require(tn[i].tensor.shape() == sn[i].tensor.shape(), "ema_update: shape mismatch");
    auto& tv = tn[i].tensor.mutable_values();
    const auto sv = sn[i].tensor.values();
    for (std::size_t j = 0; j < tv.size(); ++j)
      tv[j] = teacher.decay * tv[j] + (1.0 - teacher.decay) * sv[j];
  }
}

// Voxelwise argmax over classes; ties break toward the lower class index.
inline Mask pseudo_label(const Tensor& logits) {
  require(logits.shape().size() == 4, "pseudo_label: logits must be [C,H,W,Z]");
  const int c = logits.shape()[0];
  const int d = logits.shape()[1], h = logits.shape()[2], w = logits.shape()[3];
  const std::size_t n = static_cast<std::size_t>(d) * h * w;
  Mask m(d, h, w);
  for (std::size_t v = 0; v < n; ++v) {
    int best = 0;
    double bv = logits[v];
    for (int ci = 1; ci < c; ++ci) {
      const double x = logits[static_cast<std::size_t>(ci) * n + v];
      if (x > bv) {
        bv = x;
        best = ci;
      }
    }
    m.data[v] = static_cast<std::uint8_t>(best);
  }
  return m;
}

inline Tensor volume_to_tensor(const Volume& v) {
  return Tensor::from_vector({1, v.dims[0], v.dims[1], v.dims[2]},
                             std::vector<double>(v.data.begin(), v.data.end()));
}

}  // namespace sckan
