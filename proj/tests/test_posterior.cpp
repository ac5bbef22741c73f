#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "bbyol/downstream.hpp"
#include "bbyol/errors.hpp"
#include "bbyol/posterior.hpp"
#include "test_util.hpp"

using namespace bbyol;
namespace fs = std::filesystem;

namespace {

TwinArch tiny_arch() {
  TwinArch a;
  a.input_dim = 3;
  a.encoder_hidden = {4};
  a.embed_dim = 3;
  a.projector_hidden = 4;
  a.proj_dim = 2;
  a.predictor_hidden = 3;
  return a;
}

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "bbyol_test_posterior";
  fs::create_directories(dir);
  return dir / name;
}

PosteriorEnsemble ensemble_of(std::size_t count, std::uint64_t seed = 1) {
  RunMeta meta;
  meta.seed = seed;
  meta.config_digest = "abc";
  meta.extra["method"] = "BBYOL";
  PosteriorEnsemble e(meta);
  TwinModel m = init_twin(tiny_arch(), seed);
  for (std::size_t i = 0; i < count; ++i) {
    for (double& v : m.online_encoder.values()) v += 0.01 * static_cast<double>(i + 1);
    e.collect(m, static_cast<std::int64_t>(50 * i + 49), static_cast<std::int64_t>(i), 0.5 / (i + 1.0),
              SamplerKind::Csghmc);
  }
  return e;
}

// Member whose softmax output is the same fixed row for every input.
FineTunedModel constant_member(std::vector<double> logits) {
  FineTunedModel m;
  m.encoder = init_mlp(MlpSpec{{2, 2}, Activation::Tanh}, 1);
  m.head = init_head(2, static_cast<int>(logits.size()), 1);
  for (double& v : m.head.params.segment_values(0)) v = 0.0;
  auto b = m.head.params.segment_values(1);
  std::copy(logits.begin(), logits.end(), b.begin());
  return m;
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(Ensemble, CollectDeepCopies) {
  TwinModel m = init_twin(tiny_arch(), 3);
  PosteriorEnsemble e;
  EXPECT_EQ(e.size(), 0u);
  e.collect(m, 49, 0, 0.1, SamplerKind::Csghmc);
  EXPECT_EQ(e.size(), 1u);
  const ParamVector copy = e[0].encoder;
  for (double& v : m.online_encoder.values()) v = 123.0;
  EXPECT_TRUE(e[0].encoder == copy);
}

TEST(Ensemble, AppendRejectsLayoutChange) {
  PosteriorEnsemble e = ensemble_of(1);
  Snapshot s;
  s.encoder = init_mlp(MlpSpec{{3, 7, 3}, Activation::Tanh}, 1);
  EXPECT_THROW(e.append(s), ContractError);
}

TEST(Ensemble, KeepLastAndSelect) {
  PosteriorEnsemble e = ensemble_of(5);
  e.keep_last(3);
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e[0].step, 149);
  e.select({0, 2});
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[1].step, 249);
  EXPECT_THROW(e.select({5}), ContractError);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const PosteriorEnsemble e = ensemble_of(4);
  const fs::path p = temp_file("roundtrip.ckpt");
  save_ensemble(e, p);
  const PosteriorEnsemble back = load_ensemble(p);
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back.meta().seed, 1u);
  EXPECT_EQ(back.meta().config_digest, "abc");
  EXPECT_EQ(back.meta().extra.at("method"), "BBYOL");
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(back[i].encoder == e[i].encoder);
    EXPECT_EQ(back[i].step, e[i].step);
    EXPECT_EQ(back[i].cycle, e[i].cycle);
    EXPECT_EQ(back[i].pretrain_loss, e[i].pretrain_loss);
    EXPECT_EQ(back[i].sampler_kind, SamplerKind::Csghmc);
    EXPECT_EQ(params_digest(back[i].encoder), params_digest(e[i].encoder));
  }
  save_ensemble(back, temp_file("roundtrip2.ckpt"));
  EXPECT_EQ(slurp(p), slurp(temp_file("roundtrip2.ckpt")));
}

TEST(Checkpoint, EveryFlippedByteIsDetected) {
  const fs::path p = temp_file("flip.ckpt");
  save_ensemble(ensemble_of(2), p);
  const auto good = slurp(p);
  for (std::size_t i = 0; i < good.size(); i += 7) {
    auto bad = good;
    bad[i] ^= 0x5A;
    EXPECT_THROW(decode_archive(bad), CheckpointError) << "byte " << i;
  }
}

TEST(Checkpoint, FaultKinds) {
  const fs::path p = temp_file("faults.ckpt");
  save_ensemble(ensemble_of(2), p);
  const auto good = slurp(p);
  auto fault_of = [](const std::vector<std::uint8_t>& bytes) {
    try {
      decode_archive(bytes);
    } catch (const CheckpointError& e) {
      return e.fault();
    }
    ADD_FAILURE() << "decode succeeded";
    return CheckpointFault::Malformed;
  };

  auto body = good;
  body[good.size() / 2] ^= 1;
  EXPECT_EQ(fault_of(body), CheckpointFault::ChecksumMismatch);

  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(fault_of(magic), CheckpointFault::BadMagic);

  auto version = good;
  version[8] = 2;
  EXPECT_EQ(fault_of(version), CheckpointFault::VersionMismatch);

  EXPECT_EQ(fault_of(std::vector<std::uint8_t>(good.begin(), good.end() - 10)), CheckpointFault::Truncated);
  EXPECT_EQ(fault_of(std::vector<std::uint8_t>(good.begin(), good.begin() + 5)), CheckpointFault::Truncated);

  auto extra = good;
  extra.push_back(0);
  EXPECT_EQ(fault_of(extra), CheckpointFault::Malformed);
}

TEST(Checkpoint, CorruptFileOnDiskRaisesIoKind) {
  const fs::path p = temp_file("corrupt.ckpt");
  save_ensemble(ensemble_of(1), p);
  auto bytes = slurp(p);
  bytes[bytes.size() - 30] ^= 0xFF;
  spit(p, bytes);
  try {
    load_ensemble(p);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.fault(), CheckpointFault::ChecksumMismatch);
    EXPECT_EQ(e.exit_code(), 4);
  }
  EXPECT_THROW(load_ensemble(temp_file("missing.ckpt")), IoError);
}

TEST(Checkpoint, EmptyEnsembleSavesAndRejectsPrediction) {
  const fs::path p = temp_file("empty.ckpt");
  save_ensemble(PosteriorEnsemble{}, p);
  const PosteriorEnsemble e = load_ensemble(p);
  EXPECT_EQ(e.size(), 0u);
  std::vector<FineTunedModel> none;
  EXPECT_THROW(bma_predict(e, none, ad::Tensor::matrix(1, 2, {0.0, 0.0})), ContractError);
}

TEST(Meta, RoundTrip) {
  const std::map<std::string, std::string> m{{"a", "1"}, {"key", "some value"}};
  EXPECT_EQ(parse_meta(format_meta(m)), m);
  EXPECT_THROW(format_meta({{"bad", "x\ny"}}), Error);
}

TEST(Bma, SingleMemberIsExact) {
  std::mt19937_64 rng(2);
  FineTunedModel m;
  m.encoder = init_mlp(MlpSpec{{3, 4, 2}, Activation::Tanh}, 5);
  m.head = init_head(2, 3, 6);
  const ad::Tensor x = testutil::random_matrix(10, 3, rng);
  const std::vector<FineTunedModel> members{m};
  const ad::Tensor bma = bma_predict(members, x);
  const ad::Tensor single = predict_proba(m, x);
  for (std::size_t i = 0; i < single.size(); ++i) EXPECT_EQ(bma[i], single[i]);
}

TEST(Bma, TwoOneHotMembersAverage) {
  const std::vector<FineTunedModel> members{constant_member({1000.0, -1000.0}), constant_member({-1000.0, 1000.0})};
  const ad::Tensor p = bma_predict(members, ad::Tensor::matrix(1, 2, {0.3, 0.4}));
  EXPECT_EQ(p[0], 0.5);
  EXPECT_EQ(p[1], 0.5);
}

TEST(Bma, RowsSumToOne) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<FineTunedModel> members;
    for (int s = 0; s < 5; ++s) {
      FineTunedModel m;
      m.encoder = init_mlp(MlpSpec{{3, 5, 4}, Activation::Tanh}, static_cast<std::uint64_t>(trial * 10 + s));
      m.head = init_head(4, 6, static_cast<std::uint64_t>(trial * 10 + s));
      for (double& v : m.head.params.values()) v *= 5.0;
      members.push_back(m);
    }
    const ad::Tensor p = bma_predict(members, testutil::random_matrix(50, 3, rng, 3.0));
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (double v : p.row(r)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Bma, PrefixAndCountChecks) {
  const std::vector<FineTunedModel> members{constant_member({1000.0, -1000.0}), constant_member({-1000.0, 1000.0})};
  const ad::Tensor x = ad::Tensor::matrix(1, 2, {0.0, 0.0});
  EXPECT_EQ(bma_predict(members, x, 1)[0], 1.0);
  EXPECT_THROW(bma_predict(members, x, 3), ContractError);
  EXPECT_THROW(bma_predict(ensemble_of(3), members, x), ContractError);
}

TEST(Entropy, Examples) {
  EXPECT_NEAR(predictive_entropy(std::vector<double>(10, 0.1)), std::log(10.0), 1e-12);
  EXPECT_NEAR(predictive_entropy(std::vector<double>(10, 0.1)), 2.302585, 1e-6);
  EXPECT_EQ(predictive_entropy(std::vector<double>{0.0, 1.0, 0.0}), 0.0);
  EXPECT_NEAR(predictive_entropy(std::vector<double>{0.5, 0.5, 0.0, 0.0}), 0.693147, 1e-6);
  EXPECT_THROW(predictive_entropy(std::vector<double>{0.5, 0.4}), ContractError);
  EXPECT_THROW(predictive_entropy(std::vector<double>{1.5, -0.5}), ContractError);
}

TEST(Entropy, BoundedByLogClasses) {
  std::mt19937_64 rng(4);
  std::gamma_distribution<double> g(0.5, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> p(7);
    double s = 0.0;
    for (double& v : p) s += (v = g(rng));
    for (double& v : p) v /= s;
    const double h = predictive_entropy(p);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(7.0) + 1e-12);
  }
}
