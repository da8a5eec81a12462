#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "support.hpp"
#include "voxfeat/volume_io.hpp"

using namespace voxfeat;
using voxfeat::testing::TempDir;

namespace {

ScalarVolume ramp_x(Dims d) {
  std::vector<float> v(static_cast<std::size_t>(d.count()));
  for (std::int64_t i = 0; i < d.count(); ++i) v[static_cast<std::size_t>(i)] = float(d.unravel(i).x) / float(d.nx - 1);
  return ScalarVolume(d, std::move(v));
}

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::Conflict;
}

}  // namespace

TEST(Dims, LinearAndUnravelAreInverse) {
  const Dims d{5, 3, 4};
  for (std::int64_t i = 0; i < d.count(); ++i) EXPECT_EQ(d.linear(d.unravel(i)), i);
  EXPECT_EQ(d.linear(1, 0, 0), 1);
  EXPECT_EQ(d.linear(0, 1, 0), 5);
  EXPECT_EQ(d.linear(0, 0, 1), 15);
}

TEST(ScalarVolume, RejectsBadConstruction) {
  EXPECT_EQ(kind_of([] { ScalarVolume({1, 4, 4}, std::vector<float>(16)); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([] { ScalarVolume({2, 2, 2}, std::vector<float>(7)); }), ErrorKind::ShapeMismatch);
  EXPECT_EQ(kind_of([] { ScalarVolume({2, 2, 2}, std::vector<float>(8, 1.5f)); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([] { ScalarVolume({2, 2, 2}, std::vector<float>(8, NAN)); }), ErrorKind::InvalidArgument);
}

TEST(ScalarVolume, NormalizedCoordinatesSpanUnitCube) {
  const ScalarVolume v(Dims{3, 5, 2}, std::vector<float>(30, 0.f));
  EXPECT_EQ(v.normalized_coord(0), (std::array<double, 3>{0, 0, 0}));
  EXPECT_EQ(v.normalized_coord(29), (std::array<double, 3>{1, 1, 1}));
  EXPECT_EQ(v.normalized_coord(v.dims().linear(1, 2, 0)), (std::array<double, 3>{0.5, 0.5, 0}));
}

TEST(DerivedFields, LinearRampHasConstantNormalizedGradient) {
  const ScalarVolume v = ramp_x({6, 4, 4});
  const DerivedFields f = compute_derived_fields(v, 3);
  EXPECT_NEAR(f.maxGradientMagnitude, 1.0 / 5.0, 1e-6);
  for (std::int64_t i = 0; i < v.size(); ++i) {
    EXPECT_NEAR(f.gradient_at(i).x, 1.0, 1e-5);
    EXPECT_NEAR(f.gradient_at(i).y, 0.0, 1e-7);
    EXPECT_NEAR(f.gradient_at(i).z, 0.0, 1e-7);
  }
}

TEST(DerivedFields, ConstantVolumeHasZeroGradientAndStd) {
  const ScalarVolume v(Dims{4, 4, 4}, std::vector<float>(64, 0.25f));
  const DerivedFields f = compute_derived_fields(v, 5);
  for (std::int64_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(f.gradient_magnitude(i), 0.0f);
    EXPECT_NEAR(f.localMean[static_cast<std::size_t>(i)], 0.25, 1e-7);
    EXPECT_NEAR(f.localStd[static_cast<std::size_t>(i)], 0.0, 1e-7);
  }
}

TEST(DerivedFields, LocalStatisticsUseClampedWindow) {
  // 3-window at the corner of a two-valued volume: clamping repeats the edge
  const Dims d{3, 3, 3};
  std::vector<float> data(27, 0.f);
  data[static_cast<std::size_t>(d.linear(1, 1, 1))] = 1.f;
  const DerivedFields f = compute_derived_fields(ScalarVolume(d, data), 3);
  EXPECT_NEAR(f.localMean[static_cast<std::size_t>(d.linear(1, 1, 1))], 1.0 / 27.0, 1e-7);
  // corner (0,0,0): the window holds (1,1,1) once
  EXPECT_NEAR(f.localMean[0], 1.0 / 27.0, 1e-7);
  const double m = 1.0 / 27.0;
  EXPECT_NEAR(f.localStd[0], std::sqrt(m - m * m), 1e-6);
}

TEST(DerivedFields, RejectsEvenWindow) {
  EXPECT_EQ(kind_of([] { compute_derived_fields(ramp_x({4, 4, 4}), 4); }), ErrorKind::InvalidArgument);
}

TEST(Patch, ClampsAtBordersAndIsXFastest) {
  const ScalarVolume v = ramp_x({4, 4, 4});
  const VoxelPatch p = extract_patch(v, {0, 0, 0}, 3);
  ASSERT_EQ(p.values.size(), 27u);
  EXPECT_FLOAT_EQ(p.values[0], 0.f);  // x=-1 clamps to 0
  EXPECT_FLOAT_EQ(p.values[1], 0.f);
  EXPECT_FLOAT_EQ(p.values[2], 1.f / 3.f);
}

TEST(Trilinear, ExactOnLinearField) {
  const ScalarVolume v = ramp_x({5, 5, 5});
  EXPECT_NEAR(sample_trilinear(v, {1.25, 2.7, 3.1}), 1.25 / 4.0, 1e-6);
  EXPECT_NEAR(sample_trilinear(v, {4.0, 4.0, 4.0}), 1.0, 1e-7);
  EXPECT_NEAR(sample_trilinear(v, {-3.0, 1.0, 1.0}), 0.0, 1e-7);  // clamped
}

TEST(VolumeIo, Uint8AndUint16AreMinMaxNormalized) {
  VolumeMetadata m;
  m.dims = {2, 2, 2};
  m.dtype = "uint8";
  std::vector<char> bytes = {10, 20, 30, 40, 50, 60, 70, 110};
  const ScalarVolume v = decode_volume(m, bytes);
  EXPECT_FLOAT_EQ(v[0], 0.f);
  EXPECT_FLOAT_EQ(v[7], 1.f);
  EXPECT_FLOAT_EQ(v[4], 0.4f);

  m.dtype = "uint16";
  m.endianness = "big";
  std::vector<char> be(16, 0);
  for (int i = 0; i < 8; ++i) {
    const std::uint16_t x = static_cast<std::uint16_t>(1000 * i);
    be[static_cast<std::size_t>(2 * i)] = static_cast<char>(x >> 8);
    be[static_cast<std::size_t>(2 * i + 1)] = static_cast<char>(x & 0xff);
  }
  const ScalarVolume w = decode_volume(m, be);
  EXPECT_NEAR(w[1], 1.0 / 7.0, 1e-6);
}

TEST(VolumeIo, PayloadSizeMismatchIsRejected) {
  VolumeMetadata m;
  m.dims = {2, 2, 2};
  m.dtype = "float32";
  std::vector<char> bytes(31);
  EXPECT_EQ(kind_of([&] { decode_volume(m, bytes); }), ErrorKind::ShapeMismatch);
}

TEST(VolumeIo, Float32RoundTripIsExact) {
  TempDir tmp;
  // loading min-max normalizes, so pin the range to [0,1] for an exact trip
  const ScalarVolume raw = voxfeat::testing::random_volume({5, 4, 3}, 9);
  std::vector<float> vals(raw.data().begin(), raw.data().end());
  vals.front() = 0.f;
  vals.back() = 1.f;
  const ScalarVolume v({5, 4, 3}, vals);
  save_volume(v, tmp / "v.raw");
  EXPECT_TRUE(fs::exists(tmp / "v.raw.json"));
  EXPECT_EQ(load_volume(tmp / "v.raw"), v);
  // the sidecar path also resolves
  EXPECT_EQ(load_volume(tmp / "v.raw.json"), v);
}

TEST(VolumeIo, LabelRoundTrip) {
  TempDir tmp;
  const LabelVolume l({3, 3, 3}, std::vector<std::uint8_t>(27, 2));
  save_labels(l, tmp / "l.raw");
  EXPECT_EQ(load_labels(tmp / "l.raw"), l);
}

TEST(VolumeIo, MetadataErrorsNameTheField) {
  nlohmann::json j = {{"dims", {4, 4}}, {"dtype", "uint8"}};
  try {
    parse_metadata(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.field(), "dims");
  }
  j = {{"dims", {2, 2, 2}}, {"dtype", "int64"}};
  try {
    decode_volume(parse_metadata(j), std::vector<char>(64));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.field(), "dtype");
  }
}

TEST(VolumeIo, MissingFileIsIoError) {
  EXPECT_EQ(kind_of([] { load_volume("/nonexistent/volume.raw"); }), ErrorKind::Io);
}

TEST(Phantom, NestedSpheresHaveThreeClassesAndUnitRange) {
  const Phantom ph = generate_phantom({PhantomKind::NestedSpheres, {24, 24, 24}, 1, 0.02});
  EXPECT_EQ(ph.numClasses, 3);
  EXPECT_EQ(ph.labels.max_label(), 3);
  const auto d = ph.volume.data();
  EXPECT_FLOAT_EQ(*std::min_element(d.begin(), d.end()), 0.f);
  EXPECT_FLOAT_EQ(*std::max_element(d.begin(), d.end()), 1.f);
}

TEST(Phantom, SeedControlsNoiseOnly) {
  const Phantom a = generate_phantom({PhantomKind::NestedSpheres, {16, 16, 16}, 1, 0.02});
  const Phantom b = generate_phantom({PhantomKind::NestedSpheres, {16, 16, 16}, 1, 0.02});
  const Phantom c = generate_phantom({PhantomKind::NestedSpheres, {16, 16, 16}, 2, 0.02});
  EXPECT_EQ(a.volume, b.volume);
  EXPECT_NE(a.volume, c.volume);
  EXPECT_EQ(a.labels, c.labels);
}

TEST(Phantom, EngravedCubeCarvesTheTopFace) {
  const Phantom ph = generate_phantom({PhantomKind::EngravedCube, {32, 32, 32}, 0, 0.0});
  EXPECT_EQ(ph.numClasses, 2);
  std::int64_t minZ = 1 << 20;
  for (std::int64_t i = 0; i < ph.labels.size(); ++i)
    if (ph.labels[i] == 2) minZ = std::min(minZ, ph.labels.dims().unravel(i).z);
  // the cavity only occupies the top layers of the cube
  EXPECT_GT(minZ, 16);
}

TEST(Phantom, RejectsTinyDims) {
  EXPECT_EQ(kind_of([] { generate_phantom({PhantomKind::NestedSpheres, {8, 8, 8}, 0, 0.0}); }),
            ErrorKind::InvalidArgument);
}
