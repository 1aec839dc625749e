#pragma once

// The attention-free benchmark network written out directly from library
// primitives, reading its weights by name from an LmdaModel. Used to check
// that switching both attention modules off leaves exactly this network.

#include <map>
#include <string>

#include "lmda/model.hpp"
#include "lmda/tensor.hpp"

namespace lmda::testing {

inline Tensor benchmark_forward(const LmdaModel& m, const Tensor& x) {
  std::map<std::string, Tensor> p;
  for (const auto& [name, value] : m.parameters()) p[name] = value;
  for (const auto& [name, value] : m.buffers()) p[name] = value;
  const ModelConfig& c = m.config();

  auto bn = [&](const Tensor& h, const std::string& layer) {
    BatchNormState st{p.at(layer + ".running_mean"), p.at(layer + ".running_var")};
    return batch_norm(h, p.at(layer + ".gamma"), p.at(layer + ".beta"), st, false);
  };

  Tensor h = repeat_axis(x, 1, c.depth);
  h = bn(conv2d(h, p.at("temporal.pointwise")), "temporal.bn1");
  h = bn(conv2d(h, p.at("temporal.depthwise"), c.temporal_kernels), "temporal.bn2");
  h = gelu(h);
  h = bn(conv2d(h, p.at("spatial.pointwise")), "spatial.bn1");
  h = bn(conv2d(h, p.at("spatial.depthwise"), c.spatial_kernels), "spatial.bn2");
  h = gelu(h);
  h = avg_pool_time(h, pooling_kernel(c.fs_hz, c.n_train));
  h = reshape(h, Shape{h.dim(0), h.size() / h.dim(0)});
  return linear(h, p.at("classifier.weight"), p.at("classifier.bias"));
}

}  // namespace lmda::testing
