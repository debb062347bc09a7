#include "nn/model.hpp"

#include <cmath>

#include <json.hpp>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace advt::nn {

using nlohmann::json;

Layer Layer::dense(int64_t in, int64_t out) {
  Layer l;
  l.kind = LayerKind::Dense;
  l.in = in;
  l.out = out;
  return l;
}

Layer Layer::conv(int64_t in_ch, int64_t out_ch, int k, int stride, int padding) {
  Layer l;
  l.kind = LayerKind::Conv;
  l.in_ch = in_ch;
  l.out_ch = out_ch;
  l.k = k;
  l.stride = stride;
  l.padding = padding;
  return l;
}

Layer Layer::relu() {
  Layer l;
  l.kind = LayerKind::Relu;
  return l;
}

Layer Layer::flatten() {
  Layer l;
  l.kind = LayerKind::Flatten;
  return l;
}

std::vector<std::vector<int64_t>> ModelSpec::shape_trace() const {
  std::vector<std::vector<int64_t>> trace;
  std::vector<int64_t> cur = {input.channels, input.height, input.width};
  if (input.channels < 1 || input.height < 1 || input.width < 1)
    throw ConfigError("model input shape must be positive");
  trace.push_back(cur);
  for (size_t li = 0; li < layers.size(); ++li) {
    const Layer& l = layers[li];
    const std::string where = "layer " + std::to_string(li);
    switch (l.kind) {
      case LayerKind::Conv: {
        if (cur.size() != 3)
          throw ConfigError(where + ": conv needs an unflattened C,H,W input");
        if (cur[0] != l.in_ch)
          throw ConfigError(where + ": conv expects " + std::to_string(l.in_ch) +
                            " channels, previous layer yields " + std::to_string(cur[0]));
        if (l.k < 1 || l.stride < 1 || l.padding < 0)
          throw ConfigError(where + ": conv needs k>=1, stride>=1, padding>=0");
        int64_t oh = (cur[1] + 2 * l.padding - l.k) / l.stride + 1;
        int64_t ow = (cur[2] + 2 * l.padding - l.k) / l.stride + 1;
        if (cur[1] + 2 * l.padding < l.k || oh < 1 || ow < 1)
          throw ConfigError(where + ": conv output size is non-positive");
        cur = {l.out_ch, oh, ow};
        break;
      }
      case LayerKind::Dense: {
        if (cur.size() != 1)
          throw ConfigError(where + ": dense needs a flattened input (add flatten)");
        if (cur[0] != l.in)
          throw ConfigError(where + ": dense expects " + std::to_string(l.in) +
                            " inputs, previous layer yields " + std::to_string(cur[0]));
        if (l.out < 1) throw ConfigError(where + ": dense output must be >= 1");
        cur = {l.out};
        break;
      }
      case LayerKind::Relu:
        break;
      case LayerKind::Flatten: {
        int64_t flat = 1;
        for (int64_t d : cur) flat *= d;
        cur = {flat};
        break;
      }
    }
    trace.push_back(cur);
  }
  return trace;
}

std::vector<int64_t> ModelSpec::output_shape() const { return shape_trace().back(); }

void ModelSpec::validate() const {
  auto out = output_shape();
  if (class_count < 0) throw ConfigError("class_count must be >= 0");
  if (class_count > 0) {
    if (out.size() != 1 || out[0] != class_count)
      throw ConfigError("classifier output length " + shape_str(out) +
                        " does not equal class_count " + std::to_string(class_count));
  }
}

std::string ModelSpec::to_json() const {
  json j;
  j["input"] = {input.channels, input.height, input.width};
  j["class_count"] = class_count;
  j["layers"] = json::array();
  for (const Layer& l : layers) {
    json e;
    switch (l.kind) {
      case LayerKind::Dense:
        e = {{"kind", "dense"}, {"in", l.in}, {"out", l.out}};
        break;
      case LayerKind::Conv:
        e = {{"kind", "conv"},     {"in_ch", l.in_ch},   {"out_ch", l.out_ch},
             {"k", l.k},           {"stride", l.stride}, {"padding", l.padding}};
        break;
      case LayerKind::Relu:
        e = {{"kind", "relu"}};
        break;
      case LayerKind::Flatten:
        e = {{"kind", "flatten"}};
        break;
    }
    j["layers"].push_back(e);
  }
  return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw FormatError(std::string("model spec json: ") + e.what());
  }
  try {
    ModelSpec spec;
    auto in = j.at("input");
    spec.input = {in.at(0).get<int64_t>(), in.at(1).get<int64_t>(), in.at(2).get<int64_t>()};
    spec.class_count = j.at("class_count").get<int>();
    for (const auto& e : j.at("layers")) {
      std::string kind = e.at("kind").get<std::string>();
      if (kind == "dense") {
        spec.layers.push_back(Layer::dense(e.at("in").get<int64_t>(), e.at("out").get<int64_t>()));
      } else if (kind == "conv") {
        spec.layers.push_back(Layer::conv(e.at("in_ch").get<int64_t>(),
                                          e.at("out_ch").get<int64_t>(), e.at("k").get<int>(),
                                          e.at("stride").get<int>(), e.at("padding").get<int>()));
      } else if (kind == "relu") {
        spec.layers.push_back(Layer::relu());
      } else if (kind == "flatten") {
        spec.layers.push_back(Layer::flatten());
      } else {
        throw FormatError("model spec json: unknown layer kind '" + kind + "'");
      }
    }
    return spec;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model spec json: ") + e.what());
  }
}

bool ModelSpec::operator==(const ModelSpec& o) const { return to_json() == o.to_json(); }

const Tensor& Model::param(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  throw ArgumentError("no parameter named '" + name + "'");
}

Tensor& Model::param(const std::string& name) {
  for (auto& [n, t] : params)
    if (n == name) return t;
  throw ArgumentError("no parameter named '" + name + "'");
}

int64_t Model::param_count() const {
  int64_t n = 0;
  for (const auto& [_, t] : params) n += t.size();
  return n;
}

Model init_params(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  Model m;
  m.spec = spec;
  m.param_seed = seed;
  uint64_t param_index = 0;
  for (size_t li = 0; li < spec.layers.size(); ++li) {
    const Layer& l = spec.layers[li];
    std::string prefix = "layer" + std::to_string(li);
    if (l.kind == LayerKind::Dense) {
      Tensor w({l.in, l.out});
      double std_dev = std::sqrt(2.0 / static_cast<double>(l.in));
      Rng rng(rng_derive(seed, param_index++));
      for (int64_t i = 0; i < w.size(); ++i) w[i] = std_dev * rng.normal();
      m.params.emplace_back(prefix + ".weight", std::move(w));
      m.params.emplace_back(prefix + ".bias", Tensor({l.out}));
      ++param_index;
    } else if (l.kind == LayerKind::Conv) {
      Tensor w({l.out_ch, l.in_ch, l.k, l.k});
      double fan_in = static_cast<double>(l.in_ch) * l.k * l.k;
      double std_dev = std::sqrt(2.0 / fan_in);
      Rng rng(rng_derive(seed, param_index++));
      for (int64_t i = 0; i < w.size(); ++i) w[i] = std_dev * rng.normal();
      m.params.emplace_back(prefix + ".weight", std::move(w));
      m.params.emplace_back(prefix + ".bias", Tensor({l.out_ch}));
      ++param_index;
    }
  }
  return m;
}

void check_batch_shape(const ModelSpec& spec, const Tensor& batch) {
  if (batch.rank() != 4 || batch.dim(1) != spec.input.channels ||
      batch.dim(2) != spec.input.height || batch.dim(3) != spec.input.width) {
    throw DimensionError("batch shape " + shape_str(batch.shape()) +
                         " does not match model input (N," +
                         std::to_string(spec.input.channels) + "," +
                         std::to_string(spec.input.height) + "," +
                         std::to_string(spec.input.width) + ")");
  }
}

ForwardIds record_forward(Tape& tape, const Model& model, int input_id) {
  check_batch_shape(model.spec, tape.value(input_id));
  const int64_t batch = tape.value(input_id).dim(0);

  ForwardIds ids;
  ids.input = input_id;
  size_t pi = 0;
  auto next_param = [&]() {
    int leaf = tape.leaf(model.params[pi].second);
    ids.params.push_back(leaf);
    ++pi;
    return leaf;
  };

  int cur = input_id;
  for (const Layer& l : model.spec.layers) {
    switch (l.kind) {
      case LayerKind::Conv: {
        int w = next_param();
        int b = next_param();
        cur = tape.conv2d(cur, w, l.stride, l.padding);
        cur = tape.add_bias(cur, b);
        break;
      }
      case LayerKind::Dense: {
        int w = next_param();
        int b = next_param();
        cur = tape.matmul(cur, w);
        cur = tape.add_bias(cur, b);
        break;
      }
      case LayerKind::Relu:
        cur = tape.unary(UnaryKind::Relu, cur);
        break;
      case LayerKind::Flatten: {
        int64_t flat = tape.value(cur).size() / batch;
        cur = tape.reshape(cur, {batch, flat});
        break;
      }
    }
  }
  ids.logits = cur;
  return ids;
}

Tensor model_forward(const Model& model, const Tensor& batch) {
  Tape tape;
  int x = tape.leaf(batch);
  return tape.value(record_forward(tape, model, x).logits);
}

int record_input_gradient(Tape& tape, const Model& model, int input_id,
                          const std::vector<int>& targets) {
  check_batch_shape(model.spec, tape.value(input_id));
  const int64_t batch = tape.value(input_id).dim(0);
  if (static_cast<int64_t>(targets.size()) != batch)
    throw ArgumentError("record_input_gradient: one target per batch row required");

  // Forward, remembering what each layer's backward needs.
  struct Ctx {
    const Layer* layer;
    int pre = -1;                    // relu pre-activation node
    int weight_leaf = -1;            // conv kernel leaf
    std::vector<int64_t> in_shape;   // shape entering the layer
  };
  std::vector<Ctx> ctxs;
  size_t pi = 0;
  int cur = input_id;
  for (const Layer& l : model.spec.layers) {
    Ctx ctx;
    ctx.layer = &l;
    ctx.in_shape = tape.value(cur).shape();
    switch (l.kind) {
      case LayerKind::Conv: {
        int w = tape.leaf(model.params[pi].second);
        int b = tape.leaf(model.params[pi + 1].second);
        pi += 2;
        ctx.weight_leaf = w;
        cur = tape.conv2d(cur, w, l.stride, l.padding);
        cur = tape.add_bias(cur, b);
        break;
      }
      case LayerKind::Dense: {
        const Tensor& w = model.params[pi].second;
        int wleaf = tape.leaf(w);
        int b = tape.leaf(model.params[pi + 1].second);
        pi += 2;
        ctx.weight_leaf = tape.leaf(transpose2d(w));
        cur = tape.matmul(cur, wleaf);
        cur = tape.add_bias(cur, b);
        break;
      }
      case LayerKind::Relu:
        ctx.pre = cur;
        cur = tape.unary(UnaryKind::Relu, cur);
        break;
      case LayerKind::Flatten: {
        int64_t flat = tape.value(cur).size() / batch;
        cur = tape.reshape(cur, {batch, flat});
        break;
      }
    }
    ctxs.push_back(ctx);
  }

  // d(sum of row cross-entropies)/d logits = softmax - one_hot.
  const Tensor& logits = tape.value(cur);
  const int64_t classes = logits.dim(1);
  Tensor onehot({batch, classes});
  for (int64_t r = 0; r < batch; ++r) {
    int t = targets[static_cast<size_t>(r)];
    if (t < 0 || t >= classes)
      throw ArgumentError("record_input_gradient target out of range: " + std::to_string(t));
    onehot.at2(r, t) = 1.0;
  }
  int probs = tape.softmax(cur);
  int grad = tape.sub(probs, tape.leaf(std::move(onehot)));

  // Walk the layers in reverse, expressing each backward rule as forward ops.
  for (auto it = ctxs.rbegin(); it != ctxs.rend(); ++it) {
    const Layer& l = *it->layer;
    switch (l.kind) {
      case LayerKind::Dense:
        grad = tape.matmul(grad, it->weight_leaf);
        break;
      case LayerKind::Conv:
        grad = tape.conv2d_input_vjp(grad, it->weight_leaf, l.stride, l.padding,
                                     it->in_shape[2], it->in_shape[3]);
        break;
      case LayerKind::Relu:
        grad = tape.mul(grad, tape.unary(UnaryKind::Heaviside, it->pre));
        break;
      case LayerKind::Flatten:
        grad = tape.reshape(grad, it->in_shape);
        break;
    }
  }
  return grad;
}

}  // namespace advt::nn
