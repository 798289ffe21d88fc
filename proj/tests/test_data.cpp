#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sckan/phantom.hpp"
#include "sckan/volume.hpp"

using namespace sckan;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("sckan_test_" + tag);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("phantom generation is deterministic") {
  auto a = gen_phantom(12345, {32, 32, 32});
  auto b = gen_phantom(12345, {32, 32, 32});
  REQUIRE(a.volume.data == b.volume.data);
  REQUIRE(a.mask.data == b.mask.data);
  REQUIRE(a.gen_axis == b.gen_axis);
  auto c = gen_phantom(12346, {32, 32, 32});
  CHECK(a.volume.data != c.volume.data);
}

TEST_CASE("100 phantoms at 48^3 satisfy the foreground-fraction invariant") {
  int axis_aligned = 0;
  for (int seed = 0; seed < 100; ++seed) {
    auto ph = gen_phantom(static_cast<std::uint64_t>(seed) * 31 + 7, {48, 48, 48});
    std::size_t fg = 0;
    double cx = 0, cy = 0, cz = 0;
    for (int i = 0; i < 48; ++i)
      for (int j = 0; j < 48; ++j)
        for (int k = 0; k < 48; ++k)
          if (ph.mask.at(i, j, k)) {
            ++fg;
            cx += i;
            cy += j;
            cz += k;
          }
    const double frac = static_cast<double>(fg) / ph.mask.size();
    REQUIRE(frac >= 0.005);
    REQUIRE(frac <= 0.15);

    // mask fully inside bounds: no foreground on any face
    for (int i = 0; i < 48; ++i)
      for (int j = 0; j < 48; ++j) {
        REQUIRE(ph.mask.at(i, j, 0) == 0);
        REQUIRE(ph.mask.at(i, j, 47) == 0);
        REQUIRE(ph.mask.at(0, i, j) == 0);
        REQUIRE(ph.mask.at(47, i, j) == 0);
        REQUIRE(ph.mask.at(i, 0, j) == 0);
        REQUIRE(ph.mask.at(i, 47, j) == 0);
      }

    // intensities normalized
    for (double v : ph.volume.data) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }

    // principal axis of the mask aligns with the generative axis
    cx /= fg;
    cy /= fg;
    cz /= fg;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (int i = 0; i < 48; ++i)
      for (int j = 0; j < 48; ++j)
        for (int k = 0; k < 48; ++k)
          if (ph.mask.at(i, j, k)) {
            Eigen::Vector3d v(i - cx, j - cy, k - cz);
            cov += v * v.transpose();
          }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    Eigen::Vector3d axis = es.eigenvectors().col(2);
    const double cosang = std::abs(axis(0) * ph.gen_axis[0] + axis(1) * ph.gen_axis[1] +
                                   axis(2) * ph.gen_axis[2]);
    if (cosang > 0.8) ++axis_aligned;
  }
  CHECK(axis_aligned >= 95);
}

TEST_CASE("random crop: identity, determinism, and guaranteed foreground") {
  auto ph = gen_phantom(999, {48, 48, 48});

  Rng r1(5);
  auto [v, m] = random_crop(ph, {48, 48, 48}, r1);
  REQUIRE(v.data == ph.volume.data);
  REQUIRE(m.data == ph.mask.data);

  Rng r2(6), r3(6);
  auto a = random_crop(ph, {32, 32, 32}, r2);
  auto b = random_crop(ph, {32, 32, 32}, r3);
  REQUIRE(a.first.data == b.first.data);
  REQUIRE(a.second.data == b.second.data);

  Rng r4(7);
  for (int i = 0; i < 1000; ++i) {
    auto [cv, cm] = random_crop(ph, {32, 32, 32}, r4);
    bool fg = false;
    for (auto x : cm.data) fg = fg || x;
    REQUIRE(fg);
  }
  Rng r5(8);
  CHECK_THROWS_AS(random_crop(ph, {64, 64, 64}, r5), ContractViolation);
}

TEST_CASE("volume file round trip is bit-exact") {
  auto ph = gen_phantom(4242, {24, 20, 16});
  auto dir = tmp_dir("io");
  const std::string vp = (dir / "v.sckv").string();
  const std::string mp = (dir / "m.sckv").string();
  write_volume(vp, ph.volume);
  write_mask(mp, ph.mask);
  Volume v = read_volume(vp);
  Mask m = read_mask(mp);
  REQUIRE(v.dims == ph.volume.dims);
  REQUIRE(m.dims == ph.mask.dims);
  for (std::size_t i = 0; i < v.size(); ++i)
    REQUIRE(std::bit_cast<std::uint64_t>(v.data[i]) == std::bit_cast<std::uint64_t>(ph.volume.data[i]));
  REQUIRE(m.data == ph.mask.data);
}

TEST_CASE("volume file size is 24 header bytes plus payload") {
  auto ph = gen_phantom(777, {48, 48, 48});
  auto dir = tmp_dir("size");
  const std::string vp = (dir / "v48.sckv").string();
  write_volume(vp, ph.volume);
  REQUIRE(fs::file_size(vp) == 24 + static_cast<std::uintmax_t>(48) * 48 * 48 * 8);
  const std::string mp = (dir / "m48.sckv").string();
  write_mask(mp, ph.mask);
  REQUIRE(fs::file_size(mp) == 24 + static_cast<std::uintmax_t>(48) * 48 * 48);
}

TEST_CASE("corrupt headers raise FormatError with a byte offset") {
  auto ph = gen_phantom(31337, {16, 16, 16});
  auto dir = tmp_dir("corrupt");
  const std::string vp = (dir / "bad.sckv").string();
  write_volume(vp, ph.volume);

  {
    std::fstream f(vp, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  try {
    read_volume(vp);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset == 0);
  }

  write_volume(vp, ph.volume);
  {
    std::fstream f(vp, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const char bogus[4] = {9, 0, 0, 0};
    f.write(bogus, 4);
  }
  try {
    read_volume(vp);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset == 4);
  }

  // truncation
  write_volume(vp, ph.volume);
  fs::resize_file(vp, 100);
  CHECK_THROWS_AS(read_volume(vp), FormatError);
  // dtype mismatch: reading a volume as a mask
  write_volume(vp, ph.volume);
  CHECK_THROWS_AS(read_mask(vp), FormatError);
}

TEST_CASE("split manifests are reproducible, disjoint, and ratio-faithful") {
  for (double labeled : {0.05, 0.10, 0.20}) {
    SplitManifest m = make_split(99, 40, {48, 48, 48}, labeled, 0.15);
    SplitManifest m2 = make_split(99, 40, {48, 48, 48}, labeled, 0.15);
    REQUIRE(m.roles == m2.roles);
    const auto l = m.ids_with(Role::kLabeled);
    const auto u = m.ids_with(Role::kUnlabeled);
    const auto t = m.ids_with(Role::kTest);
    CHECK(l.size() + u.size() + t.size() == 40);
    CHECK(static_cast<int>(l.size()) == std::max(1, static_cast<int>(std::llround(labeled * 40))));
    CHECK(t.size() == 6);
  }
  CHECK_THROWS_AS(make_split(1, 3, {16, 16, 16}, 0.5, 0.5), ContractViolation);
}

TEST_CASE("manifest JSON round trip") {
  SplitManifest m = make_split(123, 12, {32, 32, 32}, 0.1, 0.15);
  auto dir = tmp_dir("manifest");
  const std::string path = (dir / "manifest.json").string();
  write_manifest(path, m);
  SplitManifest r = read_manifest(path);
  CHECK(r.dataset_seed == m.dataset_seed);
  CHECK(r.shape == m.shape);
  CHECK(r.roles == m.roles);
}

TEST_CASE("phantom seeds depend only on (dataset seed, id)") {
  CHECK(phantom_seed(7, 3) == phantom_seed(7, 3));
  CHECK(phantom_seed(7, 3) != phantom_seed(7, 4));
  CHECK(phantom_seed(7, 3) != phantom_seed(8, 3));
}

TEST_CASE("nearest-neighbor mask downsampling takes even-index voxels") {
  Mask m(4, 4, 4);
  m.at(0, 0, 0) = 1;
  m.at(2, 2, 2) = 1;
  m.at(1, 1, 1) = 1;  // odd voxel, dropped
  Mask d = downsample_mask2x(m);
  CHECK(d.dims == std::array<int, 3>{2, 2, 2});
  CHECK(d.at(0, 0, 0) == 1);
  CHECK(d.at(1, 1, 1) == 1);
  CHECK(d.at(0, 1, 0) == 0);
}
