#include "augbc/policy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace augbc {
namespace {

using nlohmann::json;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr int kEmbedDim = 8;
constexpr int kAttentionHeads = 4;
constexpr std::array<int, 3> kConvChannels = {32, 64, 128};
constexpr double kLeakySlope = 0.01;
constexpr double kLogClamp = -20.723265836946411;  // log(1e-9)

[[noreturn]] void bad(const std::string& msg) { throw std::invalid_argument(msg); }

Eigen::Map<const RowMat> mat(const PolicyParams& p, const TensorSpec& t) {
  return {p.data(t), t.rows, t.cols};
}
Eigen::Map<RowMat> mat(std::vector<double>& g, const TensorSpec& t) {
  return {g.data() + t.offset, t.rows, t.cols};
}
Eigen::Map<const VectorXd> vec(const PolicyParams& p, const TensorSpec& t) {
  return {p.data(t), t.rows};
}
Eigen::Map<VectorXd> vec(std::vector<double>& g, const TensorSpec& t) {
  return {g.data() + t.offset, t.rows};
}

/// im2col table for a k=3, stride=2, pad=1 3D convolution: for every output
/// voxel, the 27 source voxel indices (-1 where the kernel overhangs).
std::vector<std::array<int, 27>> conv_map(int in_size, int out_size) {
  std::vector<std::array<int, 27>> table(static_cast<std::size_t>(out_size) * out_size * out_size);
  int o = 0;
  for (int z = 0; z < out_size; ++z)
    for (int y = 0; y < out_size; ++y)
      for (int x = 0; x < out_size; ++x, ++o) {
        int k = 0;
        for (int kz = 0; kz < 3; ++kz)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx, ++k) {
              int iz = 2 * z - 1 + kz, iy = 2 * y - 1 + ky, ix = 2 * x - 1 + kx;
              bool in = iz >= 0 && iz < in_size && iy >= 0 && iy < in_size && ix >= 0 && ix < in_size;
              table[o][k] = in ? (iz * in_size + iy) * in_size + ix : -1;
            }
      }
  return table;
}

const std::vector<std::array<int, 27>>& conv_table(int layer) {
  static const std::vector<std::array<int, 27>> t1 = conv_map(5, 3);
  static const std::vector<std::array<int, 27>> t2 = conv_map(3, 2);
  static const std::vector<std::array<int, 27>> t3 = conv_map(2, 1);
  return layer == 0 ? t1 : layer == 1 ? t2 : t3;
}

const char* variant_name(Variant v) { return v == Variant::compact ? "compact" : "faithful"; }
const char* pooling_name(EntityPooling p) { return p == EntityPooling::mean ? "mean" : "attention"; }
const char* encoder_name(MapEncoder m) {
  return m == MapEncoder::flatten_embed ? "flatten_embed" : "conv3d";
}

}  // namespace

ArchitectureConfig ArchitectureConfig::compact(int d, std::vector<int> hidden) {
  ArchitectureConfig a;
  a.variant = Variant::compact;
  a.embedding_dim = d;
  a.entity_pooling = EntityPooling::mean;
  a.map_encoder = MapEncoder::flatten_embed;
  a.hidden_sizes = std::move(hidden);
  return a;
}

ArchitectureConfig ArchitectureConfig::faithful(int d) {
  ArchitectureConfig a;
  a.variant = Variant::faithful;
  a.embedding_dim = d;
  a.entity_pooling = EntityPooling::attention;
  a.map_encoder = MapEncoder::conv3d;
  a.hidden_sizes = {256};
  return a;
}

void ArchitectureConfig::validate() const {
  if (action_count != kActionCount) bad("arch: action_count must be 9");
  if (embedding_dim < 8) bad("arch: embedding_dim must be >= 8");
  for (int h : hidden_sizes)
    if (h < 1) bad("arch: hidden sizes must be positive");
  if (variant == Variant::faithful && embedding_dim % 2 != 0)
    bad("arch: faithful variant needs an even embedding_dim");
}

std::string ArchitectureConfig::json() const {
  std::string s = "{\"variant\":\"";
  s += variant_name(variant);
  s += "\",\"embedding_dim\":" + std::to_string(embedding_dim);
  s += ",\"entity_pooling\":\"";
  s += pooling_name(entity_pooling);
  s += "\",\"map_encoder\":\"";
  s += encoder_name(map_encoder);
  s += "\",\"hidden_sizes\":[";
  for (std::size_t i = 0; i < hidden_sizes.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(hidden_sizes[i]);
  }
  s += "],\"action_count\":" + std::to_string(action_count) + "}";
  return s;
}

ArchitectureConfig ArchitectureConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ArchitectureConfig a;
  std::string v = j.at("variant").get<std::string>();
  if (v == "compact")
    a.variant = Variant::compact;
  else if (v == "faithful")
    a.variant = Variant::faithful;
  else
    bad("arch: unknown variant " + v);
  a.embedding_dim = j.at("embedding_dim").get<int>();
  std::string p = j.at("entity_pooling").get<std::string>();
  a.entity_pooling = p == "mean" ? EntityPooling::mean : EntityPooling::attention;
  std::string m = j.at("map_encoder").get<std::string>();
  a.map_encoder = m == "flatten_embed" ? MapEncoder::flatten_embed : MapEncoder::conv3d;
  a.hidden_sizes = j.at("hidden_sizes").get<std::vector<int>>();
  a.action_count = j.at("action_count").get<int>();
  a.validate();
  return a;
}

FeatureLayout FeatureLayout::from_schema(const StateSchema& schema) {
  FeatureLayout fl;
  for (int i = 0; i < schema.continuous_dim(); ++i) {
    const std::string& name = schema.continuous_names[i];
    if (name.rfind("ent/", 0) == 0) {
      std::size_t slash = name.find('/', 4);
      std::string entity = slash == std::string::npos ? name.substr(4) : name.substr(4, slash - 4);
      auto it = std::find_if(fl.entities.begin(), fl.entities.end(),
                             [&](const auto& e) { return e.first == entity; });
      if (it == fl.entities.end()) {
        fl.entities.push_back({entity, {i}});
      } else {
        it->second.push_back(i);
      }
    } else {
      fl.self_continuous.push_back(i);
    }
  }
  for (int i = 0; i < schema.categorical_dim(); ++i) {
    if (schema.categorical_names[i].rfind("map/", 0) == 0) {
      fl.map_categorical.push_back(i);
    } else {
      fl.flag_categorical.push_back(i);
    }
  }
  return fl;
}

const TensorSpec& PolicyParams::tensor(const std::string& name) const {
  for (const TensorSpec& t : tensors)
    if (t.name == name) return t;
  throw std::invalid_argument("no tensor named " + name);
}

PolicyNet::PolicyNet(ArchitectureConfig arch, StateSchema schema)
    : arch_(std::move(arch)), schema_(std::move(schema)) {
  arch_.validate();
  schema_.validate();
  layout_ = FeatureLayout::from_schema(schema_);

  std::size_t ent_width = layout_.entities.empty() ? 0 : layout_.entities[0].second.size();
  for (const auto& [name, idx] : layout_.entities) {
    if (idx.size() != ent_width) bad("schema: entity feature widths differ (shared encoder)");
  }
  if (!layout_.map_categorical.empty()) {
    int card = schema_.categorical_cardinalities[layout_.map_categorical[0]];
    for (int i : layout_.map_categorical) {
      if (schema_.categorical_cardinalities[i] != card)
        bad("schema: map features must share a cardinality");
    }
  }
  if (arch_.variant == Variant::faithful) {
    if (layout_.entities.empty()) bad("arch: faithful variant needs entity features");
    if (layout_.map_categorical.size() != 125) bad("arch: faithful variant needs a 5x5x5 map");
  }
}

PolicyParams PolicyNet::init_params(std::uint64_t seed) const {
  const int d = arch_.embedding_dim;
  const int self_in =
      static_cast<int>(layout_.self_continuous.size() + kEmbedDim * layout_.flag_categorical.size());
  const int n_map = static_cast<int>(layout_.map_categorical.size());

  PolicyParams p;
  p.arch = arch_;
  auto add = [&](const std::string& name, int rows, int cols) {
    p.tensors.push_back({name, rows, cols, p.values.size()});
    p.values.resize(p.values.size() + static_cast<std::size_t>(rows) * cols);
  };

  for (int i : layout_.flag_categorical)
    add("flag_embed/" + schema_.categorical_names[i], schema_.categorical_cardinalities[i], kEmbedDim);
  if (n_map > 0)
    add("map_embed", schema_.categorical_cardinalities[layout_.map_categorical[0]], kEmbedDim);
  add("self/W", d, self_in);
  add("self/b", d, 1);
  if (!layout_.entities.empty()) {
    add("ent/W", d, static_cast<int>(layout_.entities[0].second.size()));
    add("ent/b", d, 1);
  }

  int concat = d;
  if (arch_.variant == Variant::compact) {
    if (!layout_.entities.empty()) concat += d;
    if (n_map > 0) {
      add("map_fc/W", d, n_map * kEmbedDim);
      add("map_fc/b", d, 1);
      concat += d;
    }
  } else {
    for (const char* name : {"attn/Wq", "attn/Wk", "attn/Wv", "attn/Wo"}) add(name, 2 * d, 2 * d);
    int in_ch = kEmbedDim;
    for (int layer = 0; layer < 3; ++layer) {
      add("conv" + std::to_string(layer + 1) + "/K", kConvChannels[layer], in_ch * 27);
      add("conv" + std::to_string(layer + 1) + "/b", kConvChannels[layer], 1);
      in_ch = kConvChannels[layer];
    }
    concat = 2 * d + kConvChannels[2];
  }

  int prev = concat;
  for (std::size_t i = 0; i < arch_.hidden_sizes.size(); ++i) {
    add("hidden" + std::to_string(i) + "/W", arch_.hidden_sizes[i], prev);
    add("hidden" + std::to_string(i) + "/b", arch_.hidden_sizes[i], 1);
    prev = arch_.hidden_sizes[i];
  }
  add("head/W", arch_.action_count, prev);
  add("head/b", arch_.action_count, 1);

  RngStream root(seed);
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    const TensorSpec& t = p.tensors[i];
    RngStream rng = root.child(i);
    double* dst = p.data(t);
    std::size_t n = static_cast<std::size_t>(t.rows) * t.cols;
    if (t.name.rfind("flag_embed/", 0) == 0 || t.name == "map_embed") {
      for (std::size_t k = 0; k < n; ++k) dst[k] = rng.uniform(-0.5, 0.5);
    } else if (t.cols == 1) {
      std::fill(dst, dst + n, 0.0);  // biases
    } else {
      double s = 1.0 / std::sqrt(static_cast<double>(t.cols));
      for (std::size_t k = 0; k < n; ++k) dst[k] = rng.uniform(-s, s);
    }
  }
  return p;
}

void PolicyNet::check_state(const StateVector& s) const {
  if (static_cast<int>(s.continuous.size()) != schema_.continuous_dim() ||
      static_cast<int>(s.categorical.size()) != schema_.categorical_dim())
    bad("state does not match the bound schema");
  for (std::size_t i = 0; i < s.categorical.size(); ++i) {
    if (s.categorical[i] < 0 || s.categorical[i] >= schema_.categorical_cardinalities[i])
      bad("categorical value out of range for the bound schema");
  }
}

/// Everything the backward pass needs from the forward pass.
struct PolicyNet::Batch {
  MatrixXd self_in;               // [B x self_in], flag embeddings already tanh-ed
  std::vector<MatrixXd> ent_in;   // per entity [B x ent_width]
  MatrixXd map_emb;               // [B x n_map*8], tanh-ed, voxel-major
  MatrixXd xa;                    // [B x d] post-ReLU
  std::vector<MatrixXd> xe;       // per entity [B x d]
  MatrixXd pooled;                // [B x d] (mean pooling)
  MatrixXd xm;                    // [B x d] or [B x 128]
  std::vector<MatrixXd> conv_out; // per layer [B x voxels*channels], post-activation
  std::vector<MatrixXd> attn;     // per sample: U, Q, K, V, O stacked vertically (5N x 2d)
  std::vector<MatrixXd> attn_w;   // per sample: head softmax weights stacked (heads*N x N)
  MatrixXd z;                     // [B x concat]
  std::vector<MatrixXd> hidden;   // post-ReLU
  MatrixXd probs;                 // [B x 9]
};

Eigen::MatrixXd PolicyNet::run(const PolicyParams& params,
                               const std::vector<const Transition*>& batch,
                               std::vector<double>* grad, double* loss) const {
  if (batch.empty()) bad("bc_loss: empty batch");
  if (params.arch != arch_) bad("params built for a different architecture");
  for (double v : params.values) {
    if (!std::isfinite(v)) bad("non-finite parameter detected");
  }
  for (const Transition* t : batch) check_state(t->state);

  const int B = static_cast<int>(batch.size());
  const int d = arch_.embedding_dim;
  const int n_ent = static_cast<int>(layout_.entities.size());
  const int n_map = static_cast<int>(layout_.map_categorical.size());
  const int n_flag = static_cast<int>(layout_.flag_categorical.size());
  const int self_cont = static_cast<int>(layout_.self_continuous.size());

  Batch ctx;

  // ---- input blocks ----
  ctx.self_in.resize(B, self_cont + kEmbedDim * n_flag);
  std::vector<Eigen::Map<const RowMat>> flag_tables;
  flag_tables.reserve(n_flag);
  for (int f = 0; f < n_flag; ++f)
    flag_tables.push_back(
        mat(params, params.tensor("flag_embed/" +
                                  schema_.categorical_names[layout_.flag_categorical[f]])));
  for (int b = 0; b < B; ++b) {
    const StateVector& s = batch[b]->state;
    for (int i = 0; i < self_cont; ++i)
      ctx.self_in(b, i) = s.continuous[layout_.self_continuous[i]];
    for (int f = 0; f < n_flag; ++f) {
      int sym = s.categorical[layout_.flag_categorical[f]];
      for (int k = 0; k < kEmbedDim; ++k)
        ctx.self_in(b, self_cont + f * kEmbedDim + k) = std::tanh(flag_tables[f](sym, k));
    }
  }

  ctx.ent_in.resize(n_ent);
  for (int e = 0; e < n_ent; ++e) {
    const std::vector<int>& idx = layout_.entities[e].second;
    ctx.ent_in[e].resize(B, static_cast<int>(idx.size()));
    for (int b = 0; b < B; ++b)
      for (std::size_t i = 0; i < idx.size(); ++i)
        ctx.ent_in[e](b, static_cast<int>(i)) = batch[b]->state.continuous[idx[i]];
  }

  if (n_map > 0) {
    auto table = mat(params, params.tensor("map_embed"));
    ctx.map_emb.resize(B, n_map * kEmbedDim);
    for (int b = 0; b < B; ++b) {
      const StateVector& s = batch[b]->state;
      for (int v = 0; v < n_map; ++v) {
        int sym = s.categorical[layout_.map_categorical[v]];
        for (int k = 0; k < kEmbedDim; ++k)
          ctx.map_emb(b, v * kEmbedDim + k) = std::tanh(table(sym, k));
      }
    }
  }

  // ---- encoders ----
  const TensorSpec& tsW = params.tensor("self/W");
  const TensorSpec& tsb = params.tensor("self/b");
  ctx.xa = (ctx.self_in * mat(params, tsW).transpose()).rowwise() +
           vec(params, tsb).transpose();
  ctx.xa = ctx.xa.cwiseMax(0.0);

  if (n_ent > 0) {
    const TensorSpec& teW = params.tensor("ent/W");
    const TensorSpec& teb = params.tensor("ent/b");
    ctx.xe.resize(n_ent);
    for (int e = 0; e < n_ent; ++e)
      ctx.xe[e] = (ctx.ent_in[e] * mat(params, teW).transpose()).rowwise() +
                  vec(params, teb).transpose();
  }

  if (arch_.variant == Variant::compact) {
    if (n_ent > 0) {
      ctx.pooled = MatrixXd::Zero(B, d);
      for (int e = 0; e < n_ent; ++e) ctx.pooled += ctx.xe[e];
      ctx.pooled /= n_ent;
    }
    if (n_map > 0) {
      ctx.xm = (ctx.map_emb * mat(params, params.tensor("map_fc/W")).transpose()).rowwise() +
               vec(params, params.tensor("map_fc/b")).transpose();
    }
    int concat = d + (n_ent > 0 ? d : 0) + (n_map > 0 ? d : 0);
    ctx.z.resize(B, concat);
    ctx.z.leftCols(d) = ctx.xa;
    int at = d;
    if (n_ent > 0) {
      ctx.z.middleCols(at, d) = ctx.pooled;
      at += d;
    }
    if (n_map > 0) ctx.z.middleCols(at, d) = ctx.xm;
  } else {
    // Multi-head self-attention over the entity tokens u_i = [x_a ; x_e_i].
    const int dd = 2 * d;
    const int dh = dd / kAttentionHeads;
    auto Wq = mat(params, params.tensor("attn/Wq"));
    auto Wk = mat(params, params.tensor("attn/Wk"));
    auto Wv = mat(params, params.tensor("attn/Wv"));
    auto Wo = mat(params, params.tensor("attn/Wo"));
    ctx.attn.resize(B);
    ctx.attn_w.resize(B);
    MatrixXd xt(B, dd);
    for (int b = 0; b < B; ++b) {
      MatrixXd U(n_ent, dd);
      for (int e = 0; e < n_ent; ++e) {
        U.row(e).head(d) = ctx.xa.row(b);
        U.row(e).tail(d) = ctx.xe[e].row(b);
      }
      MatrixXd Q = U * Wq.transpose(), K = U * Wk.transpose(), V = U * Wv.transpose();
      MatrixXd O(n_ent, dd);
      MatrixXd A(kAttentionHeads * n_ent, n_ent);
      for (int h = 0; h < kAttentionHeads; ++h) {
        MatrixXd scores = Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose() /
                          std::sqrt(static_cast<double>(dh));
        for (int r = 0; r < n_ent; ++r) {
          VectorXd row = scores.row(r);
          double mx = row.maxCoeff();
          VectorXd ex = (row.array() - mx).exp();
          A.row(h * n_ent + r) = ex.transpose() / ex.sum();
        }
        O.middleCols(h * dh, dh) =
            A.middleRows(h * n_ent, n_ent) * V.middleCols(h * dh, dh);
      }
      MatrixXd Y = O * Wo.transpose();
      xt.row(b) = Y.colwise().mean();

      ctx.attn[b].resize(5 * n_ent, dd);
      ctx.attn[b] << U, Q, K, V, O;
      ctx.attn_w[b] = A;
    }

    // Three stride-2 3D convolutions over the embedded map volume.
    MatrixXd in = ctx.map_emb;
    int in_ch = kEmbedDim;
    ctx.conv_out.resize(3);
    for (int layer = 0; layer < 3; ++layer) {
      const auto& tbl = conv_table(layer);
      const int out_vox = static_cast<int>(tbl.size());
      const int out_ch = kConvChannels[layer];
      auto K = mat(params, params.tensor("conv" + std::to_string(layer + 1) + "/K"));
      auto bias = vec(params, params.tensor("conv" + std::to_string(layer + 1) + "/b"));
      MatrixXd out(B, out_vox * out_ch);
      MatrixXd patch(out_vox, in_ch * 27);
      for (int b = 0; b < B; ++b) {
        patch.setZero();
        for (int o = 0; o < out_vox; ++o)
          for (int k = 0; k < 27; ++k) {
            int src = tbl[o][k];
            if (src >= 0)
              patch.row(o).segment(k * in_ch, in_ch) = in.row(b).segment(src * in_ch, in_ch);
          }
        MatrixXd res = (patch * K.transpose()).rowwise() + bias.transpose();
        res = (res.array() > 0.0).select(res, kLeakySlope * res);
        for (int o = 0; o < out_vox; ++o)
          out.row(b).segment(o * out_ch, out_ch) = res.row(o);
      }
      ctx.conv_out[layer] = out;
      in = std::move(out);
      in_ch = out_ch;
    }
    ctx.xm = ctx.conv_out[2];  // [B x 128]

    ctx.z.resize(B, dd + kConvChannels[2]);
    ctx.z.leftCols(dd) = xt;
    ctx.z.rightCols(kConvChannels[2]) = ctx.xm;
  }

  // ---- trunk ----
  MatrixXd cur = ctx.z;
  ctx.hidden.resize(arch_.hidden_sizes.size());
  for (std::size_t i = 0; i < arch_.hidden_sizes.size(); ++i) {
    const std::string tag = "hidden" + std::to_string(i);
    cur = ((cur * mat(params, params.tensor(tag + "/W")).transpose()).rowwise() +
           vec(params, params.tensor(tag + "/b")).transpose())
              .cwiseMax(0.0);
    ctx.hidden[i] = cur;
  }
  MatrixXd logits = (cur * mat(params, params.tensor("head/W")).transpose()).rowwise() +
                    vec(params, params.tensor("head/b")).transpose();

  ctx.probs.resize(B, arch_.action_count);
  for (int b = 0; b < B; ++b) {
    VectorXd row = logits.row(b);
    double mx = row.maxCoeff();
    VectorXd ex = (row.array() - mx).exp();
    ctx.probs.row(b) = ex.transpose() / ex.sum();
  }

  if (loss != nullptr) {
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
      int a = batch[b]->action;
      total -= std::max(std::log(ctx.probs(b, a)), kLogClamp);
    }
    *loss = total / B;
  }
  if (grad == nullptr) return ctx.probs;

  // ---- backward ----
  grad->assign(params.values.size(), 0.0);
  std::vector<double>& g = *grad;

  MatrixXd dlogits = ctx.probs;
  for (int b = 0; b < B; ++b) {
    int a = batch[b]->action;
    if (std::log(ctx.probs(b, a)) < kLogClamp) {
      dlogits.row(b).setZero();  // clamped sample: constant loss
    } else {
      dlogits(b, a) -= 1.0;
    }
  }
  dlogits /= B;

  const MatrixXd& last = arch_.hidden_sizes.empty() ? ctx.z : ctx.hidden.back();
  mat(g, params.tensor("head/W")) += dlogits.transpose() * last;
  vec(g, params.tensor("head/b")) += dlogits.colwise().sum().transpose();
  MatrixXd dcur = dlogits * mat(params, params.tensor("head/W"));

  for (int i = static_cast<int>(arch_.hidden_sizes.size()) - 1; i >= 0; --i) {
    const std::string tag = "hidden" + std::to_string(i);
    dcur = (ctx.hidden[i].array() > 0.0).select(dcur, 0.0);
    const MatrixXd& input = i == 0 ? ctx.z : ctx.hidden[i - 1];
    mat(g, params.tensor(tag + "/W")) += dcur.transpose() * input;
    vec(g, params.tensor(tag + "/b")) += dcur.colwise().sum().transpose();
    dcur = dcur * mat(params, params.tensor(tag + "/W"));
  }
  MatrixXd dz = std::move(dcur);

  MatrixXd dxa = MatrixXd::Zero(B, d);
  std::vector<MatrixXd> dxe(n_ent, MatrixXd::Zero(B, d));
  MatrixXd dmap_emb;
  if (n_map > 0) dmap_emb = MatrixXd::Zero(B, n_map * kEmbedDim);

  if (arch_.variant == Variant::compact) {
    dxa = dz.leftCols(d);
    int at = d;
    if (n_ent > 0) {
      MatrixXd dpooled = dz.middleCols(at, d) / n_ent;
      for (int e = 0; e < n_ent; ++e) dxe[e] = dpooled;
      at += d;
    }
    if (n_map > 0) {
      MatrixXd dxm = dz.middleCols(at, d);
      mat(g, params.tensor("map_fc/W")) += dxm.transpose() * ctx.map_emb;
      vec(g, params.tensor("map_fc/b")) += dxm.colwise().sum().transpose();
      dmap_emb = dxm * mat(params, params.tensor("map_fc/W"));
    }
  } else {
    const int dd = 2 * d;
    const int dh = dd / kAttentionHeads;
    auto Wq = mat(params, params.tensor("attn/Wq"));
    auto Wk = mat(params, params.tensor("attn/Wk"));
    auto Wv = mat(params, params.tensor("attn/Wv"));
    auto Wo = mat(params, params.tensor("attn/Wo"));
    auto gWq = mat(g, params.tensor("attn/Wq"));
    auto gWk = mat(g, params.tensor("attn/Wk"));
    auto gWv = mat(g, params.tensor("attn/Wv"));
    auto gWo = mat(g, params.tensor("attn/Wo"));

    MatrixXd dxt = dz.leftCols(dd);
    for (int b = 0; b < B; ++b) {
      const MatrixXd& st = ctx.attn[b];
      auto U = st.middleRows(0, n_ent);
      auto Q = st.middleRows(n_ent, n_ent);
      auto K = st.middleRows(2 * n_ent, n_ent);
      auto V = st.middleRows(3 * n_ent, n_ent);
      auto O = st.middleRows(4 * n_ent, n_ent);
      const MatrixXd& A = ctx.attn_w[b];

      MatrixXd dY = MatrixXd::Zero(n_ent, dd);
      for (int e = 0; e < n_ent; ++e) dY.row(e) = dxt.row(b) / n_ent;
      gWo += dY.transpose() * O;
      MatrixXd dO = dY * Wo;

      MatrixXd dQ = MatrixXd::Zero(n_ent, dd), dK = MatrixXd::Zero(n_ent, dd),
               dV = MatrixXd::Zero(n_ent, dd);
      for (int h = 0; h < kAttentionHeads; ++h) {
        auto Ah = A.middleRows(h * n_ent, n_ent);
        MatrixXd dAh = dO.middleCols(h * dh, dh) * V.middleCols(h * dh, dh).transpose();
        dV.middleCols(h * dh, dh) = Ah.transpose() * dO.middleCols(h * dh, dh);
        MatrixXd dS(n_ent, n_ent);
        for (int r = 0; r < n_ent; ++r) {
          double dot = (dAh.row(r).array() * Ah.row(r).array()).sum();
          dS.row(r) = Ah.row(r).array() * (dAh.row(r).array() - dot);
        }
        dS /= std::sqrt(static_cast<double>(dh));
        dQ.middleCols(h * dh, dh) = dS * K.middleCols(h * dh, dh);
        dK.middleCols(h * dh, dh) = dS.transpose() * Q.middleCols(h * dh, dh);
      }
      gWq += dQ.transpose() * U;
      gWk += dK.transpose() * U;
      gWv += dV.transpose() * U;
      MatrixXd dU = dQ * Wq + dK * Wk + dV * Wv;
      for (int e = 0; e < n_ent; ++e) {
        dxa.row(b) += dU.row(e).head(d);
        dxe[e].row(b) += dU.row(e).tail(d);
      }
    }

    // Convolution backward, deepest layer first.
    MatrixXd dout = dz.rightCols(kConvChannels[2]);
    for (int layer = 2; layer >= 0; --layer) {
      const auto& tbl = conv_table(layer);
      const int out_vox = static_cast<int>(tbl.size());
      const int out_ch = kConvChannels[layer];
      const int in_ch = layer == 0 ? kEmbedDim : kConvChannels[layer - 1];
      const int in_total = layer == 0 ? n_map * kEmbedDim : 0;
      const MatrixXd& input = layer == 0 ? ctx.map_emb : ctx.conv_out[layer - 1];
      auto K = mat(params, params.tensor("conv" + std::to_string(layer + 1) + "/K"));
      auto gK = mat(g, params.tensor("conv" + std::to_string(layer + 1) + "/K"));
      auto gb = vec(g, params.tensor("conv" + std::to_string(layer + 1) + "/b"));

      MatrixXd din = MatrixXd::Zero(B, layer == 0 ? in_total : input.cols());
      MatrixXd patch(out_vox, in_ch * 27);
      for (int b = 0; b < B; ++b) {
        MatrixXd dres(out_vox, out_ch);
        for (int o = 0; o < out_vox; ++o)
          dres.row(o) = dout.row(b).segment(o * out_ch, out_ch);
        // leaky' from post-activation sign
        for (int o = 0; o < out_vox; ++o)
          for (int c = 0; c < out_ch; ++c)
            if (ctx.conv_out[layer](b, o * out_ch + c) <= 0.0) dres(o, c) *= kLeakySlope;

        patch.setZero();
        for (int o = 0; o < out_vox; ++o)
          for (int k = 0; k < 27; ++k) {
            int src = tbl[o][k];
            if (src >= 0)
              patch.row(o).segment(k * in_ch, in_ch) = input.row(b).segment(src * in_ch, in_ch);
          }
        gK += dres.transpose() * patch;
        gb += dres.colwise().sum().transpose();
        MatrixXd dpatch = dres * K;
        for (int o = 0; o < out_vox; ++o)
          for (int k = 0; k < 27; ++k) {
            int src = tbl[o][k];
            if (src >= 0)
              din.row(b).segment(src * in_ch, in_ch) += dpatch.row(o).segment(k * in_ch, in_ch);
          }
      }
      if (layer == 0) {
        dmap_emb = std::move(din);
      } else {
        dout = std::move(din);
      }
    }
  }

  // Entity encoder (shared weights accumulate over every entity).
  if (n_ent > 0) {
    auto gW = mat(g, params.tensor("ent/W"));
    auto gb = vec(g, params.tensor("ent/b"));
    for (int e = 0; e < n_ent; ++e) {
      gW += dxe[e].transpose() * ctx.ent_in[e];
      gb += dxe[e].colwise().sum().transpose();
    }
  }

  // Self encoder through its ReLU.
  dxa = (ctx.xa.array() > 0.0).select(dxa, 0.0);
  mat(g, params.tensor("self/W")) += dxa.transpose() * ctx.self_in;
  vec(g, params.tensor("self/b")) += dxa.colwise().sum().transpose();
  MatrixXd dself_in = dxa * mat(params, params.tensor("self/W"));

  // Flag embeddings through tanh.
  for (int f = 0; f < n_flag; ++f) {
    const TensorSpec& t = params.tensor(
        "flag_embed/" + schema_.categorical_names[layout_.flag_categorical[f]]);
    auto gE = mat(g, t);
    for (int b = 0; b < B; ++b) {
      int sym = batch[b]->state.categorical[layout_.flag_categorical[f]];
      for (int k = 0; k < kEmbedDim; ++k) {
        double y = ctx.self_in(b, self_cont + f * kEmbedDim + k);
        gE(sym, k) += dself_in(b, self_cont + f * kEmbedDim + k) * (1.0 - y * y);
      }
    }
  }

  // Map embedding through tanh.
  if (n_map > 0 && dmap_emb.size() > 0) {
    auto gE = mat(g, params.tensor("map_embed"));
    for (int b = 0; b < B; ++b) {
      const StateVector& s = batch[b]->state;
      for (int v = 0; v < n_map; ++v) {
        int sym = s.categorical[layout_.map_categorical[v]];
        for (int k = 0; k < kEmbedDim; ++k) {
          double y = ctx.map_emb(b, v * kEmbedDim + k);
          gE(sym, k) += dmap_emb(b, v * kEmbedDim + k) * (1.0 - y * y);
        }
      }
    }
  }

  return ctx.probs;
}

Eigen::VectorXd PolicyNet::forward(const PolicyParams& params, const StateVector& s) const {
  Transition t{s, 0};
  std::vector<const Transition*> batch{&t};
  MatrixXd probs = run(params, batch, nullptr, nullptr);
  return probs.row(0).transpose();
}

double PolicyNet::bc_loss(const PolicyParams& params, const std::vector<const Transition*>& batch,
                          std::vector<double>* grad) const {
  double loss = 0.0;
  run(params, batch, grad, &loss);
  return loss;
}

double PolicyNet::bc_loss(const PolicyParams& params, const std::vector<Transition>& batch,
                          std::vector<double>* grad) const {
  std::vector<const Transition*> ptrs;
  ptrs.reserve(batch.size());
  for (const Transition& t : batch) ptrs.push_back(&t);
  return bc_loss(params, ptrs, grad);
}

void TrainConfig::validate() const {
  if (epochs < 1) bad("train: epochs must be >= 1");
  if (batch_size < 1) bad("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) bad("train: learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    bad("train: momentum decay rates must lie in [0, 1)");
}

int greedy_action(const Eigen::VectorXd& probs) {
  int best = 0;
  for (int i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  return best;
}

int sample_action(const Eigen::VectorXd& probs, RngStream& rng) {
  double u = rng.uniform();
  double cum = 0.0;
  for (int i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return i;
  }
  return static_cast<int>(probs.size()) - 1;
}

int act(const PolicyNet& net, const PolicyParams& params, const StateVector& s, ActMode mode,
        RngStream& rng) {
  Eigen::VectorXd probs = net.forward(params, s);
  return mode == ActMode::greedy ? greedy_action(probs) : sample_action(probs, rng);
}

double action_accuracy(const PolicyNet& net, const PolicyParams& params, const DemoDataset& d) {
  std::vector<const Transition*> all;
  for (const Trajectory& t : d.trajectories)
    for (const Transition& tr : t.transitions) all.push_back(&tr);
  if (all.empty()) bad("action_accuracy: empty dataset");

  std::size_t hits = 0;
  const std::size_t chunk = 512;
  for (std::size_t at = 0; at < all.size(); at += chunk) {
    std::vector<const Transition*> part(all.begin() + at,
                                        all.begin() + std::min(at + chunk, all.size()));
    MatrixXd probs = net.probabilities(params, part);
    for (std::size_t b = 0; b < part.size(); ++b) {
      if (greedy_action(probs.row(static_cast<int>(b)).transpose()) == part[b]->action) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(all.size());
}

Eigen::MatrixXd PolicyNet::probabilities(const PolicyParams& params,
                                         const std::vector<const Transition*>& batch) const {
  return run(params, batch, nullptr, nullptr);
}

void save_checkpoint(const std::string& path, const PolicyParams& params,
                     const std::string& schema_hash, std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open for write: " + path);

  std::string header = "{\"format_version\":1,\"kind\":\"augbc-checkpoint\",\"arch\":" +
                       params.arch.json() + ",\"schema_hash\":\"" + schema_hash +
                       "\",\"seed\":" + std::to_string(seed) +
                       ",\"param_count\":" + std::to_string(params.param_count()) + ",\"tensors\":[";
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const TensorSpec& t = params.tensors[i];
    if (i) header += ',';
    header += "{\"name\":\"" + t.name + "\",\"rows\":" + std::to_string(t.rows) +
              ",\"cols\":" + std::to_string(t.cols) + "}";
  }
  header += "]}\n";
  out << header;
  out.write(reinterpret_cast<const char*>(params.values.data()),
            static_cast<std::streamsize>(params.values.size() * sizeof(double)));
  if (!out) throw ValidationError("I/O failure writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  std::string header;
  if (!std::getline(in, header)) throw ValidationError("checkpoint: missing header line");

  json j;
  try {
    j = json::parse(header);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: malformed header: ") + e.what());
  }
  if (j.value("format_version", 0) != 1 || j.value("kind", "") != "augbc-checkpoint")
    throw ValidationError("checkpoint: not an augbc checkpoint");

  Checkpoint ck;
  ck.params.arch = ArchitectureConfig::from_json(j.at("arch").dump());
  ck.schema_hash = j.at("schema_hash").get<std::string>();
  ck.seed = j.at("seed").get<std::uint64_t>();

  std::size_t count = j.at("param_count").get<std::size_t>();
  std::size_t offset = 0;
  for (const auto& t : j.at("tensors")) {
    TensorSpec spec{t.at("name").get<std::string>(), t.at("rows").get<int>(),
                    t.at("cols").get<int>(), offset};
    if (spec.rows < 1 || spec.cols < 1) throw ValidationError("checkpoint: bad tensor shape");
    offset += static_cast<std::size_t>(spec.rows) * spec.cols;
    ck.params.tensors.push_back(std::move(spec));
  }
  if (offset != count) throw ValidationError("checkpoint: tensor table disagrees with param_count");

  ck.params.values.resize(count);
  in.read(reinterpret_cast<char*>(ck.params.values.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double))
    throw ValidationError("checkpoint: truncated parameter payload");
  for (double v : ck.params.values) {
    if (!std::isfinite(v)) throw ValidationError("checkpoint: non-finite parameter");
  }
  return ck;
}

}  // namespace augbc
