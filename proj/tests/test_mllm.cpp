#include "segprompt/mllm.hpp"
#include "segprompt/training.hpp"

#include "fixtures.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

using namespace segprompt;
using namespace segprompt::mllm;
using masks::StructureId;
using testkit::rect;

namespace {

ModelConfig tiny_config(std::uint64_t seed = 3) {
  ModelConfig c;
  c.encoder = encoder::VitConfig{32, 8, 2, 8, 2, {1, 2}, "block_output"};
  c.extractor.dim = 8;
  c.extractor.spatial_side = 4;
  c.lm.dim = 8;
  c.lm.depth = 1;
  c.lm.heads = 2;
  c.lm.max_len = 256;
  c.encoder_seed = 11;
  c.seed = seed;
  return c;
}

prompting::StudyInput tiny_study(std::uint64_t seed, const std::string& target) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> px(8, 247);
  prompting::StudyInput s;
  s.id = "s" + std::to_string(seed);
  s.frontal.image = GrayImage(32, 32);
  for (Index i = 0; i < s.frontal.image.size(); ++i) s.frontal.image.data()[i] = static_cast<std::uint8_t>(px(rng));
  s.frontal.masks = masks::MaskSet(32, 32);
  s.frontal.masks.set(StructureId::Heart, rect(32, 12, 8, 24, 22));
  s.frontal.masks.set(StructureId::ETT, rect(32, 0, 15, 14, 17));
  s.target = target;
  return s;
}

Tokenizer tiny_tokenizer() {
  return Tokenizer::build({"an endotracheal tube is in place .", "the heart is enlarged .", "no findings ."});
}

// Independent forward of a depth-1 TinyLm written with plain loops.
struct Ref {
  std::map<std::string, Matrix<double>> w;
  const Matrix<double>& at(const std::string& n) const { return w.at(n); }
};

using Rows = std::vector<std::vector<double>>;

Rows linear(const Rows& x, const Matrix<double>& W, const Matrix<double>& b) {
  Rows y(x.size(), std::vector<double>(static_cast<std::size_t>(W.rows())));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (Index o = 0; o < W.rows(); ++o) {
      double acc = b(0, o);
      for (Index k = 0; k < W.cols(); ++k) acc += x[i][static_cast<std::size_t>(k)] * W(o, k);
      y[i][static_cast<std::size_t>(o)] = acc;
    }
  return y;
}

Rows norm(const Rows& x, const Matrix<double>& g, const Matrix<double>& b) {
  Rows y = x;
  for (auto& row : y) {
    double mean = 0, var = 0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    for (std::size_t k = 0; k < row.size(); ++k)
      row[k] = (row[k] - mean) / std::sqrt(var + 1e-5) * g(0, static_cast<Index>(k)) + b(0, static_cast<Index>(k));
  }
  return y;
}

double reference_loss(const Ref& r, const Rows& prompt, const std::vector<int>& target, int heads) {
  Rows x = prompt;
  std::vector<int> ids{Tokenizer::kBos};
  ids.insert(ids.end(), target.begin(), target.end());
  for (int id : ids) {
    std::vector<double> e(static_cast<std::size_t>(r.at("lm.tok_emb").cols()));
    for (std::size_t k = 0; k < e.size(); ++k) e[k] = r.at("lm.tok_emb")(id, static_cast<Index>(k));
    x.push_back(e);
  }
  const std::size_t n = x.size(), d = x[0].size(), hd = d / static_cast<std::size_t>(heads);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) x[i][k] += r.at("lm.pos_emb")(static_cast<Index>(i), static_cast<Index>(k));

  const std::string b = "lm.block1.";
  const Rows h1 = norm(x, r.at(b + "ln1.gamma"), r.at(b + "ln1.beta"));
  const Rows q = linear(h1, r.at(b + "attn.q.weight"), r.at(b + "attn.q.bias"));
  const Rows kk = linear(h1, r.at(b + "attn.k.weight"), r.at(b + "attn.k.bias"));
  const Rows v = linear(h1, r.at(b + "attn.v.weight"), r.at(b + "attn.v.bias"));
  Rows att(n, std::vector<double>(d, 0.0));
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * hd;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(i + 1);
      double mx = -1e300;
      for (std::size_t j = 0; j <= i; ++j) {
        double dot = 0;
        for (std::size_t k = 0; k < hd; ++k) dot += q[i][off + k] * kk[j][off + k];
        s[j] = dot / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (double& e : s) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j <= i; ++j)
        for (std::size_t k = 0; k < hd; ++k) att[i][off + k] += s[j] / z * v[j][off + k];
    }
  }
  const Rows o = linear(att, r.at(b + "attn.o.weight"), r.at(b + "attn.o.bias"));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) x[i][k] += o[i][k];
  Rows m = linear(norm(x, r.at(b + "ln2.gamma"), r.at(b + "ln2.beta")), r.at(b + "mlp.0.weight"), r.at(b + "mlp.0.bias"));
  for (auto& row : m)
    for (double& e : row) e = 0.5 * e * (1.0 + std::erf(e / std::sqrt(2.0)));
  m = linear(m, r.at(b + "mlp.1.weight"), r.at(b + "mlp.1.bias"));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) x[i][k] += m[i][k];
  const Rows logits = linear(norm(x, r.at("lm.ln_f.gamma"), r.at("lm.ln_f.beta")), r.at("lm.head.weight"), r.at("lm.head.bias"));

  std::vector<int> labels = target;
  labels.push_back(Tokenizer::kEos);
  double total = 0;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const auto& row = logits[prompt.size() + t];
    double mx = *std::max_element(row.begin(), row.end()), z = 0;
    for (double e : row) z += std::exp(e - mx);
    total += -(row[static_cast<std::size_t>(labels[t])] - mx - std::log(z));
  }
  return total / static_cast<double>(labels.size());
}

}  // namespace

TEST(ForwardLoss, UniformLogitsGiveLogVocab) {
  Tape<double> tape;
  const int V = 13;
  auto loss = loss_from_logits(tape.constant(Matrix<double>::Zero(9, V)), 5, {4, 5, 6});
  EXPECT_NEAR(loss.value()(0, 0), std::log(13.0), 1e-12);
}

TEST(ForwardLoss, InjectedOneHotLogitsGiveZero) {
  const std::vector<int> target{4, 7, 5};
  const auto labels = target_labels(3, target);
  Matrix<double> logits = Matrix<double>::Zero(7, 10);
  for (std::size_t r = 0; r < labels.size(); ++r)
    if (labels[r] >= 0) logits(static_cast<Index>(r), labels[r]) = 1e3;
  Tape<double> tape;
  EXPECT_NEAR(loss_from_logits(tape.constant(logits), 3, target).value()(0, 0), 0.0, 1e-12);
}

TEST(ForwardLoss, PromptLogitsDoNotMatter) {
  std::mt19937_64 rng(5);
  Matrix<double> logits = testkit::random_matrix(10, 12, rng);
  const std::vector<int> target{3, 9, 4, 4};
  Tape<double> t1;
  const double base = loss_from_logits(t1.constant(logits), 5, target).value()(0, 0);
  for (Index r = 0; r < 5; ++r) logits.row(r).setRandom();
  Tape<double> t2;
  EXPECT_EQ(loss_from_logits(t2.constant(logits), 5, target).value()(0, 0), base);
}

TEST(ForwardLoss, MatchesStraightLineReference) {
  LmConfig cfg;
  cfg.vocab = 9;
  cfg.dim = 8;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.max_len = 32;
  std::mt19937_64 rng(42);
  TinyLm<double> lm(cfg, rng);
  Ref ref;
  for (auto* p : lm.parameters()) ref.w[p->name] = p->value;
  // Bigger random weights keep the comparison from being dominated by near-zero logits.
  std::normal_distribution<double> nd(0.0, 0.5);
  for (auto* p : lm.parameters()) {
    for (Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += nd(rng);
    ref.w[p->name] = p->value;
  }
  const Matrix<double> prompt = testkit::random_matrix(4, 8, rng);
  const std::vector<int> target{5, 7, 4};

  Tape<double> tape;
  std::vector<int> ids{Tokenizer::kBos, 5, 7, 4};
  auto inputs = nn::concat_rows<double>({tape.constant(prompt), lm.embed(tape, ids)});
  const double got = loss_from_logits(lm.logits(tape, inputs), 4, target).value()(0, 0);

  Rows rows(4, std::vector<double>(8));
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 8; ++k) rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = prompt(i, k);
  EXPECT_NEAR(got, reference_loss(ref, rows, target, 2), 1e-10);
}

TEST(ForwardLoss, OverflowNamesLengths) {
  ModelConfig c = tiny_config();
  c.lm.max_len = 20;
  MultimodalModel<double> model(c, tiny_tokenizer());
  Tape<double> tape;
  try {
    model.forward_loss(tape, tape.constant(Matrix<double>::Zero(18, 8)), {4, 5, 6});
    FAIL() << "expected a contract error";
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("18"), std::string::npos) << msg;
    EXPECT_NE(msg.find("20"), std::string::npos) << msg;
  }
}

TEST(Adapter, OneEmbeddingPerCell) {
  std::mt19937_64 rng(1);
  Adapter<double> a(16, 8, 4, rng);
  EXPECT_EQ(a.mlp().depth(), 4u);
  encoder::FeatureGrid<double> fg{4, 4, testkit::random_matrix(16, 16, rng)};
  EXPECT_EQ(a.adapt(fg).rows(), 16);
  EXPECT_EQ(a.adapt(fg).cols(), 8);
  encoder::FeatureGrid<double> wrong{4, 4, testkit::random_matrix(16, 12, rng)};
  EXPECT_THROW(a.adapt(wrong), ContractError);
}

TEST(Adapter, IdentityPassesFeaturesThrough) {
  std::mt19937_64 rng(2);
  Adapter<double> a(8, 8, 4, rng);
  a.set_identity();
  encoder::FeatureGrid<double> fg{2, 2, testkit::random_matrix(4, 8, rng)};
  EXPECT_EQ(a.adapt(fg), fg.features);
}

TEST(Adapter, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Adapter<double> a(6, 5, 4, rng);
    const Matrix<double> x = testkit::random_matrix(4, 6, rng);
    auto ps = a.parameters();
    auto r = testkit::check_param_grads(ps, [&](Tape<double>& t) { return nn::sum_squares(a(t, t.constant(x))); });
    EXPECT_LT(r.worst, 1e-4) << "seed " << seed << " " << r.where;
  }
}

TEST(FullStack, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    MultimodalModel<double> model(tiny_config(seed), tiny_tokenizer());
    const auto ps = model.prepare(tiny_study(seed, "an endotracheal tube is in place ."), Strategy::SS, true);
    auto params = model.trainable_parameters();
    auto r = testkit::check_param_grads(params, [&](Tape<double>& t) { return model.study_loss(t, ps); });
    EXPECT_LT(r.worst, 1e-3) << "seed " << seed << " " << r.where;
  }
}

TEST(FullStack, NsAndSsDifferOnlyInSegRows) {
  MultimodalModel<double> model(tiny_config(), tiny_tokenizer());
  const auto study = tiny_study(4, "no findings .");
  const auto ss = model.prepare(study, Strategy::SS, true);
  const auto ns = model.prepare(study, prompting::build_prompt(study, Strategy::NS, true, prompting::MaskNames::On));
  Tape<double> t1, t2;
  const auto rs = model.realize(t1, ss);
  const auto rn = model.realize(t2, ns);
  ASSERT_EQ(rs.embeddings.rows(), rn.embeddings.rows() + 4);
  Matrix<double> kept(rn.embeddings.rows(), rn.embeddings.cols());
  Index out = 0;
  for (const auto& span : rs.spans) {
    if (std::holds_alternative<prompting::SegSlot>(ss.prompt.segments[span.segment])) continue;
    kept.middleRows(out, span.length) = rs.embeddings.value().middleRows(span.start, span.length);
    out += span.length;
  }
  ASSERT_EQ(out, kept.rows());
  EXPECT_EQ(kept, rn.embeddings.value());
}

TEST(Train, ZeroLearningRateChangesNothing) {
  MultimodalModel<double> model(tiny_config(), tiny_tokenizer());
  std::vector<PreparedStudy<double>> data;
  data.push_back(model.prepare(tiny_study(1, "no findings ."), Strategy::SS, true));
  data.push_back(model.prepare(tiny_study(2, "the heart is enlarged ."), Strategy::SS, true));
  TrainConfig tc;
  tc.base_lr = 0.0;
  tc.epochs = 2;
  tc.batch_size = 1;
  tc.threads = 1;
  std::vector<Matrix<double>> before;
  for (auto* p : model.trainable_parameters()) before.push_back(p->value);
  const auto res = train(model, data, tc);
  EXPECT_EQ(res.curve.size(), 4u);
  EXPECT_EQ(res.encoder_checksum_before, res.encoder_checksum_after);
  std::size_t i = 0;
  for (auto* p : model.trainable_parameters()) EXPECT_EQ(p->value, before[i++]) << p->name;
}

TEST(Train, EncoderStaysFrozenWhileTheRestLearns) {
  MultimodalModel<float> model(tiny_config(), tiny_tokenizer());
  std::vector<PreparedStudy<float>> data;
  data.push_back(model.prepare(tiny_study(1, "no findings ."), Strategy::SS, true));
  TrainConfig tc;
  tc.base_lr = 1e-2;
  tc.epochs = 5;
  tc.batch_size = 1;
  const double first = mean_loss(model, data);
  const auto res = train(model, data, tc);
  EXPECT_EQ(res.encoder_checksum_before, res.encoder_checksum_after);
  EXPECT_LT(mean_loss(model, data), first);
}

TEST(Train, ThreadCountDoesNotChangeResults) {
  auto run = [](int threads) {
    MultimodalModel<float> model(tiny_config(), tiny_tokenizer());
    std::vector<PreparedStudy<float>> data;
    for (std::uint64_t s = 1; s <= 4; ++s) data.push_back(model.prepare(tiny_study(s, "no findings ."), Strategy::SS, true));
    TrainConfig tc;
    tc.base_lr = 1e-3;
    tc.epochs = 1;
    tc.batch_size = 4;
    tc.threads = threads;
    train(model, data, tc);
    return encoder::parameter_checksum(model.trainable_parameters());
  };
  EXPECT_EQ(run(1), run(3));
}

TEST(Generate, ZeroBudgetAndDeterminism) {
  MultimodalModel<float> model(tiny_config(), tiny_tokenizer());
  const auto ps = model.prepare(tiny_study(7, "no findings ."), Strategy::SS, true);
  EXPECT_TRUE(model.generate(ps, 0).empty());
  const auto a = model.generate(ps, 12);
  EXPECT_LE(a.size(), 12u);
  EXPECT_EQ(a, model.generate(ps, 12));
}

TEST(Checkpoint, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "segprompt_mllm_ckpt";
  std::filesystem::remove_all(dir);
  MultimodalModel<float> a(tiny_config(1), tiny_tokenizer());
  a.save(dir);
  MultimodalModel<float> b(tiny_config(2), tiny_tokenizer());
  EXPECT_NE(encoder::parameter_checksum(a.parameters()), encoder::parameter_checksum(b.parameters()));
  b.load_weights(dir / "model.ckpt");
  EXPECT_EQ(encoder::parameter_checksum(a.parameters()), encoder::parameter_checksum(b.parameters()));
  std::filesystem::remove_all(dir);
}

TEST(Tokenizer, RoundTripAndSpecials) {
  const Tokenizer tok = tiny_tokenizer();
  EXPECT_EQ(tok.word(Tokenizer::kBos), tok.word(1));
  const auto ids = tok.encode("The heart is enlarged.");
  EXPECT_EQ(tok.decode(ids), "the heart is enlarged .");
  EXPECT_EQ(tok.encode("zebra")[0], Tokenizer::kUnk);
  EXPECT_EQ(Tokenizer::from_json(tok.to_json()).encode("no findings ."), tok.encode("no findings ."));
}
