#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "stylealign/synth.hpp"

using namespace stylealign;

namespace {

std::string fixture(const std::string& name) { return std::string(STYLEALIGN_FIXTURES) + "/" + name; }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename Fn>
std::string error_of(Fn&& fn) {
  try {
    fn();
  } catch (const ParseError& e) {
    return e.what();
  }
  return "<no error>";
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(Pts, FixtureRoundTripsByteIdentically) {
  const std::string text = slurp(fixture("face_68.pts"));
  const auto lm = parse_pts(text);
  EXPECT_EQ(lm.scheme(), Scheme::p68());
  EXPECT_EQ(serialize_pts(lm), text);
}

TEST(Pts, ParsesPlainExample) {
  const auto lm = parse_pts("version: 1\nn_points: 2\n{\n1.5 2\n3 4.25\n}\n");
  EXPECT_EQ(lm.scheme().name(), "SYNTH(2)");
  EXPECT_EQ(lm[0], (Point{1.5, 2}));
  EXPECT_EQ(serialize_pts(lm), "version: 1\nn_points: 2\n{\n1.500 2.000\n3.000 4.250\n}\n");
}

TEST(Pts, CorruptedFixturesReportLineAndCause) {
  EXPECT_NE(error_of([] { load_pts(fixture("bad_count.pts")); }).find("n_points: 68 but 67 points"), std::string::npos);
  const auto tok = error_of([] { load_pts(fixture("bad_token.pts")); });
  EXPECT_NE(tok.find("line 14"), std::string::npos) << tok;
  EXPECT_NE(tok.find("non-numeric token 'abc'"), std::string::npos) << tok;
  EXPECT_NE(error_of([] { load_pts(fixture("truncated.pts")); }).find("missing '}'"), std::string::npos);
  EXPECT_THROW(parse_pts("n_points: 1\n{\n0 0\n}\n"), ParseError);
  EXPECT_THROW(parse_pts("version: 1\nn_points: 1\n{\n0 0\n}\nextra\n"), ParseError);
}

TEST(Wflw, FixtureRoundTripsByteIdentically) {
  std::string text = slurp(fixture("wflw_line.txt"));
  const std::string line = text.substr(0, text.find('\n'));
  const auto s = parse_wflw_line(line);
  EXPECT_EQ(s.landmarks.scheme(), Scheme::p98());
  EXPECT_EQ(s.bbox, BoundingBox(96, 71, 412, 430));
  ASSERT_TRUE(s.attributes.has_value());
  EXPECT_TRUE(has(*s.attributes, Attribute::Illumination));
  EXPECT_TRUE(has(*s.attributes, Attribute::Blur));
  EXPECT_FALSE(has(*s.attributes, Attribute::Pose));
  EXPECT_EQ(s.image_path, "51--Dresses/51_Dresses_wearingdress_51_377.jpg");
  EXPECT_EQ(serialize_wflw_line(s), line);
}

TEST(Wflw, ListFileGivesDistinctIds) {
  const auto ds = load_wflw_file(fixture("wflw_list.txt"));
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds[0].id, "1:51--Dresses/51_Dresses_wearingdress_51_377.jpg");
  EXPECT_TRUE(has(*ds[1].attributes, Attribute::Occlusion));
}

TEST(Wflw, CorruptedFixtures) {
  EXPECT_NE(error_of([] { load_wflw_file(fixture("wflw_short.txt")); }).find("expected 207"), std::string::npos);
  EXPECT_NE(error_of([] { load_wflw_file(fixture("wflw_bad_attr.txt")); }).find("must be 0 or 1"),
            std::string::npos);
}

TEST(Manifest, RoundTripsFieldIdentically) {
  auto ds = generate_synth_dataset(6, 32, 9).dataset;
  Sample syn = ds[0];
  syn.id = "synthetic_one";
  syn.synthetic = true;
  syn.style_donor = ds[1].id;
  syn.recipient = ds[0].id;
  syn.checkpoint_hash = "0123456789abcdef";
  syn.attributes.reset();
  ds.push_back(syn);
  const auto back = parse_manifest(manifest_text(ds));
  EXPECT_TRUE(back.same_records(ds));
  EXPECT_EQ(manifest_text(back), manifest_text(ds));
}

TEST(Manifest, EmptyDatasetKeepsScheme) {
  const Dataset empty(Scheme::p98());
  const auto back = parse_manifest(manifest_text(empty));
  EXPECT_EQ(back.size(), 0u);
  EXPECT_EQ(back.scheme(), Scheme::p98());
}

TEST(Manifest, Errors) {
  const auto ds = generate_synth_dataset(2, 32, 1).dataset;
  std::string text = manifest_text(ds);
  EXPECT_THROW(parse_manifest(""), ParseError);
  EXPECT_THROW(parse_manifest("{\"format\":\"other\"}\n"), ParseError);
  // Record count disagrees with the header.
  EXPECT_THROW(parse_manifest(text.substr(0, text.rfind('{'))), ParseError);
  // Unknown field inside a record.
  std::string bad = text;
  bad.insert(bad.rfind('}'), ",\"colour\":1");
  const auto msg = error_of([&] { parse_manifest(bad); });
  EXPECT_NE(msg.find("unknown field 'colour'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
}

TEST(Dataset, SyntheticNeedsDonor) {
  Dataset ds(Scheme::synth(10));
  auto s = generate_synth_dataset(1, 32, 1).dataset[0];
  s.synthetic = true;
  EXPECT_THROW(ds.push_back(s), InvalidInput);
  Dataset p68(Scheme::p68());
  EXPECT_THROW(p68.push_back(generate_synth_dataset(1, 32, 1).dataset[0]), InvalidInput);
}

TEST(Numbers, ShortestRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 123.456789012345, -0.0, 1e-7, 466.107}) {
    double back = 0;
    ASSERT_TRUE(parse_number(format_number(v, 3), back));
    EXPECT_EQ(back, v);
  }
  EXPECT_EQ(format_number(2.5, 3), "2.500");
  EXPECT_EQ(format_number(96, 0), "96");
}

TEST(Synth, DeterministicAndSized) {
  const auto a = generate_synth_dataset(20, 48, 7);
  const auto b = generate_synth_dataset(20, 48, 7);
  ASSERT_EQ(a.dataset.size(), 20u);
  EXPECT_TRUE(a.dataset.same_records(b.dataset));
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(a.dataset[i].image, b.dataset[i].image);
  EXPECT_EQ(a.dataset[0].image.shape(), (Shape{3, 48, 48}));
  EXPECT_EQ(a.dataset.scheme(), Scheme::synth(10));
  EXPECT_FALSE(generate_synth_dataset(20, 48, 8).dataset.same_records(a.dataset));
}

TEST(Synth, LandmarksAreAFunctionOfStructureOnly) {
  const auto sd = generate_synth_dataset(3, 64, 2);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(sd.dataset[i].landmarks, synth_landmarks(sd.factors[i].structure));
}

TEST(Synth, StyleAndStructureFactorsAreUncorrelated) {
  const auto sd = generate_synth_dataset(1000, 16, 11);
  for (std::size_t a = 0; a < StructureFactors::names.size(); ++a)
    for (std::size_t b = 0; b < StyleFactors::names.size(); ++b) {
      std::vector<double> x, y;
      for (const auto& f : sd.factors) x.push_back(f.structure.values()[a]), y.push_back(f.style.values()[b]);
      EXPECT_LT(std::abs(pearson(x, y)), 0.1) << StructureFactors::names[a] << " vs " << StyleFactors::names[b];
    }
}

TEST(Synth, FactorSidecarColumnsMatchFields) {
  const auto sd = generate_synth_dataset(3, 32, 4);
  const auto csv = factors_csv(sd.dataset, sd.factors);
  const std::string header = csv.substr(0, csv.find('\n'));
  std::string expect = "id";
  for (const char* n : StructureFactors::names) expect += std::string(",") + n;
  for (const char* n : StyleFactors::names) expect += std::string(",") + n;
  EXPECT_EQ(header, expect);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(Images, PnmRoundTrip) {
  const auto sd = generate_synth_dataset(1, 24, 3);
  const auto dir = std::filesystem::temp_directory_path() / "stylealign_pnm_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "a.ppm").string();
  write_pnm(path, sd.dataset[0].image);
  EXPECT_EQ(read_pnm(path), sd.dataset[0].image);
  const auto gray = generate_synth_dataset(1, 24, 3, 1);
  write_pnm((dir / "b.pgm").string(), gray.dataset[0].image);
  EXPECT_EQ(read_pnm((dir / "b.pgm").string()), gray.dataset[0].image);
  std::filesystem::remove_all(dir);
}
