#include <gtest/gtest.h>

#include <set>

#include "stylealign/synth.hpp"
#include "stylealign/translation.hpp"

using namespace stylealign;

namespace {

DisentanglerConfig tiny_config() {
  DisentanglerConfig c;
  c.image_size = 32;
  c.heatmap_size = 16;
  c.landmarks = 10;
  c.blocks = 2;
  c.base_channels = 8;
  c.max_channels = 8;
  c.style_dim = 4;
  return c;
}

}  // namespace

TEST(Donors, ExhaustiveConstraints) {
  Rng rng(1);
  const auto d = assign_donors(10, 8, rng);
  ASSERT_EQ(d.size(), 10u);
  std::size_t total = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    const std::set<std::size_t> uniq(d[i].begin(), d[i].end());
    EXPECT_EQ(uniq.size(), 8u);
    EXPECT_EQ(uniq.count(i), 0u);
    for (auto j : d[i]) EXPECT_LT(j, 10u);
    total += d[i].size();
  }
  EXPECT_EQ(total, 80u);
  Rng again(1);
  EXPECT_EQ(assign_donors(10, 8, again), d);
}

TEST(Donors, UniformOverOthers) {
  Rng rng(2);
  std::vector<int> counts(6, 0);
  for (int t = 0; t < 5000; ++t) {
    const auto d = assign_donors(6, 2, rng);
    for (auto j : d[0]) ++counts[j];
  }
  EXPECT_EQ(counts[0], 0);
  for (int j = 1; j < 6; ++j) EXPECT_NEAR(counts[j], 2000, 150);
}

TEST(Donors, RejectsTooManyStyles) {
  Rng rng(3);
  EXPECT_THROW(assign_donors(5, 5, rng), ConfigError);
  EXPECT_THROW(assign_donors(1, 1, rng), ConfigError);
  EXPECT_THROW(assign_donors(5, -1, rng), ConfigError);
  EXPECT_NO_THROW(assign_donors(5, 4, rng));
  EXPECT_TRUE(assign_donors(1, 0, rng)[0].empty());
}

TEST(Augment, CardinalityProvenanceAndAnnotations) {
  Disentangler<float> m(tiny_config(), 1);
  const auto ds = generate_synth_dataset(10, 32, 4).dataset;
  AugmentConfig cfg;
  EXPECT_EQ(cfg.k, 8);
  cfg.seed = 5;
  const auto syn = augment_dataset(m, ds, cfg, "abc123");
  ASSERT_EQ(syn.size(), 80u);
  std::map<std::string, const Sample*> by_id;
  for (const auto& s : ds) by_id[s.id] = &s;
  for (const auto& s : syn) {
    EXPECT_TRUE(s.synthetic);
    ASSERT_TRUE(s.style_donor && s.recipient);
    EXPECT_NE(*s.style_donor, *s.recipient);
    EXPECT_EQ(s.landmarks, by_id.at(*s.recipient)->landmarks);
    EXPECT_EQ(s.bbox, by_id.at(*s.recipient)->bbox);
    EXPECT_EQ(s.checkpoint_hash, std::optional<std::string>("abc123"));
    EXPECT_EQ(s.image.shape(), (Shape{3, 32, 32}));
  }
  const auto again = augment_dataset(m, ds, cfg, "abc123");
  EXPECT_TRUE(again.same_records(syn));
  for (std::size_t i = 0; i < syn.size(); ++i) EXPECT_EQ(again[i].image, syn[i].image);
}

TEST(Augment, ZeroStylesGivesEmptyDataset) {
  Disentangler<float> m(tiny_config(), 1);
  AugmentConfig cfg;
  cfg.k = 0;
  EXPECT_TRUE(augment_dataset(m, generate_synth_dataset(3, 32, 4).dataset, cfg).empty());
  cfg.k = 3;
  EXPECT_THROW(augment_dataset(m, generate_synth_dataset(3, 32, 4).dataset, cfg), ConfigError);
}

TEST(Translate, SelfTranslationEqualsReconstruction) {
  Disentangler<float> m(tiny_config(), 2);
  const auto ds = generate_synth_dataset(4, 32, 6).dataset;
  Rng rng(1);
  for (const auto& s : ds) EXPECT_EQ(translate_style(m, s, s, true, rng).image, reconstruct_sample(m, s));
}

TEST(Translate, StructurePathIsDonorIndependent) {
  Disentangler<float> m(tiny_config(), 3);
  const auto ds = generate_synth_dataset(4, 32, 7).dataset;
  Rng rng(1);
  const auto a = translate_style(m, ds[1], ds[0], true, rng);
  const auto b = translate_style(m, ds[2], ds[0], true, rng);
  const auto c = translate_style(m, ds[3], ds[0], false, rng);
  EXPECT_EQ(a.structure, b.structure);
  EXPECT_EQ(a.structure, c.structure);
  EXPECT_NE(a.image, b.image);
}

TEST(Translate, LiteralVariantUsesRecipientHeatmaps) {
  Disentangler<float> m(tiny_config(), 3);
  const auto ds = generate_synth_dataset(2, 32, 8).dataset;
  Rng rng(1);
  const auto normal = translate_style(m, ds[1], ds[0], true, rng, false);
  const auto literal = translate_style(m, ds[1], ds[0], true, rng, true);
  EXPECT_NE(normal.style.z, literal.style.z);
  EXPECT_EQ(normal.structure, literal.structure);
}

TEST(Translate, SchemeMismatchRejected) {
  Disentangler<float> m(tiny_config(), 3);
  const auto ds = generate_synth_dataset(1, 32, 8).dataset;
  Sample other = ds[0];
  other.landmarks = LandmarkSet(Scheme::synth(3), {{1, 1}, {2, 2}, {3, 3}});
  Rng rng(1);
  EXPECT_THROW(translate_style(m, ds[0], other, true, rng), InvalidInput);
}

TEST(Translate, PasteBackKeepsRecipientFrame) {
  Disentangler<float> m(tiny_config(), 3);
  auto ds = generate_synth_dataset(2, 48, 9).dataset;
  // Recipient boxed inside a larger frame: the synthetic image must share that frame.
  Sample r = ds[0];
  r.bbox = BoundingBox(4, 4, 44, 44);
  AugmentConfig cfg;
  cfg.k = 1;
  Dataset two(ds.scheme());
  two.push_back(r);
  two.push_back(ds[1]);
  const auto syn = augment_dataset(m, two, cfg);
  EXPECT_EQ(syn[0].image.shape(), (Shape{3, 48, 48}));
  EXPECT_EQ(syn[0].landmarks, r.landmarks);
  EXPECT_EQ(syn[0].image.at(0, 0, 0), 0.0f);
}
