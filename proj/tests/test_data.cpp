#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "fedbalance/data.hpp"
#include "fedbalance/errors.hpp"

using namespace fedbalance;
namespace fs = std::filesystem;

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

struct IdxFiles {
  fs::path dir, images, labels;

  IdxFiles(std::uint32_t img_magic, std::uint32_t lab_magic, std::uint32_t n_img, std::uint32_t n_lab,
           std::size_t pixel_bytes, std::size_t label_bytes) {
    static int counter = 0;
    dir = fs::temp_directory_path() / ("fedbalance_idx_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(dir);
    images = dir / "images";
    labels = dir / "labels";
    std::ofstream im(images, std::ios::binary);
    put_u32(im, img_magic);
    put_u32(im, n_img);
    put_u32(im, 2);
    put_u32(im, 2);
    for (std::size_t i = 0; i < pixel_bytes; ++i) im.put(static_cast<char>(i * 40 % 256));
    std::ofstream lb(labels, std::ios::binary);
    put_u32(lb, lab_magic);
    put_u32(lb, n_lab);
    for (std::size_t i = 0; i < label_bytes; ++i) lb.put(static_cast<char>(i % 2));
  }
  ~IdxFiles() { fs::remove_all(dir); }
};

std::uint32_t read_be32(const fs::path& p, std::streamoff at) {
  std::ifstream in(p, std::ios::binary);
  in.seekg(at);
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

ClientShard shard_of(std::vector<int> counts) {
  ClientShard s;
  s.per_class_counts = std::move(counts);
  int next = 0;
  for (int c : s.per_class_counts)
    for (int k = 0; k < c; ++k) s.indices.push_back(next++);
  return s;
}

}  // namespace

TEST_CASE("small IDX pair loads and scales pixels") {
  IdxFiles f(0x803, 0x801, 3, 3, 12, 3);
  Dataset d = load_mnist_idx(f.images, f.labels);
  CHECK(d.size() == 3);
  CHECK(d.dim() == 4);
  CHECK(d.class_count == 2);
  CHECK(d.features.maxCoeff() <= 1.0);
  CHECK(d.features(1, 0) == doctest::Approx(40.0 / 255.0));
}

TEST_CASE("IDX errors name the offset") {
  SUBCASE("labels with the image magic") {
    IdxFiles f(0x803, 0x803, 3, 3, 12, 3);
    CHECK_THROWS_AS(load_mnist_idx(f.images, f.labels), ParseError);
  }
  SUBCASE("zero images") {
    IdxFiles f(0x803, 0x801, 0, 0, 0, 0);
    CHECK_THROWS_WITH_AS(load_mnist_idx(f.images, f.labels), doctest::Contains("offset"), ParseError);
  }
  SUBCASE("truncated pixels") {
    IdxFiles f(0x803, 0x801, 3, 3, 10, 3);
    CHECK_THROWS_WITH_AS(load_mnist_idx(f.images, f.labels), doctest::Contains("offset"), ParseError);
  }
  SUBCASE("count mismatch") {
    IdxFiles f(0x803, 0x801, 3, 2, 12, 2);
    CHECK_THROWS_AS(load_mnist_idx(f.images, f.labels), ParseError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_mnist_idx("/nonexistent/a", "/nonexistent/b"), ParseError);
  }
}

TEST_CASE("bundled MNIST subset agrees with its raw headers") {
  fs::path dir = fs::path(FEDBALANCE_DATA_DIR) / "mnist5k";
  for (auto [img, lab] : {std::pair{"train-images-idx3-ubyte", "train-labels-idx1-ubyte"},
                          std::pair{"t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"}}) {
    REQUIRE(read_be32(dir / img, 0) == 0x803);
    REQUIRE(read_be32(dir / lab, 0) == 0x801);
    std::uint32_t n = read_be32(dir / img, 4);
    std::uint32_t rows = read_be32(dir / img, 8), cols = read_be32(dir / img, 12);
    Dataset d = load_mnist_idx(dir / img, dir / lab);
    CHECK(d.size() == static_cast<int>(n));
    CHECK(d.dim() == static_cast<int>(rows * cols));
    CHECK(d.dim() == 784);
    CHECK(d.class_count == 10);
    CHECK_NOTHROW(d.validate());
  }
}

TEST_CASE("synthetic data is deterministic and separable") {
  SyntheticSpec spec;
  spec.per_class = 200;
  Dataset a = make_synthetic(spec, 4), b = make_synthetic(spec, 4), c = make_synthetic(spec, 5);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  CHECK(a.features != c.features);
  CHECK(a.features.minCoeff() >= 0.0);
  CHECK(a.features.maxCoeff() <= 1.0);

  // Nearest class mean is a linear rule.
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(a.dim(), a.class_count);
  auto counts = a.class_counts();
  for (int i = 0; i < a.size(); ++i) means.col(a.labels[static_cast<std::size_t>(i)]) += a.features.col(i);
  for (int c2 = 0; c2 < a.class_count; ++c2) means.col(c2) /= counts[static_cast<std::size_t>(c2)];
  int hit = 0;
  for (int i = 0; i < a.size(); ++i) {
    Eigen::Index best = 0;
    (means.colwise() - a.features.col(i)).colwise().squaredNorm().minCoeff(&best);
    hit += best == a.labels[static_cast<std::size_t>(i)];
  }
  CHECK(static_cast<double>(hit) / a.size() > 0.99);

  spec.per_class = 0;
  CHECK_THROWS_AS(make_synthetic(spec, 1), ConfigError);
  spec.per_class = 10;
  spec.separation = 0.0;
  CHECK_THROWS_AS(make_synthetic(spec, 1), ConfigError);
}

TEST_CASE("imbalance ratios") {
  CHECK(local_imbalance(shard_of({50, 5})) == 10.0);
  CHECK(local_imbalance(shard_of({50, 0})) == kExtremeImbalance);
  CHECK(local_imbalance(shard_of({7, 7, 7})) == 1.0);
  std::vector<ClientShard> one{shard_of({4, 4})};
  CHECK(global_imbalance(one) == 1.0);
  std::vector<ClientShard> two{shard_of({10, 0}), shard_of({0, 10})};
  CHECK(global_imbalance(two) == 1.0);
  CHECK(local_imbalance(two[0]) == kExtremeImbalance);
  CHECK(composition(two) == std::vector<std::int64_t>{10, 10});

  std::vector<ClientShard> scaled{shard_of({30, 6, 12}), shard_of({3, 0, 9})};
  std::vector<ClientShard> times3{shard_of({90, 18, 36}), shard_of({9, 0, 27})};
  CHECK(global_imbalance(scaled) == doctest::Approx(global_imbalance(times3)));
  CHECK(local_imbalance(scaled[0]) == local_imbalance(times3[0]));
}

TEST_CASE("250 per majority class and 25 per minority class gives ratio 10") {
  std::vector<ClientShard> shards;
  for (int j = 0; j < 20; ++j) {
    std::vector<int> counts(10, 0);
    for (int c = 0; c < 10; ++c)
      if ((c + j) % 2 == 0) counts[static_cast<std::size_t>(c)] = (c == 2 || c == 4 || c == 7) ? 25 : 250;
    shards.push_back(shard_of(counts));
  }
  CHECK(global_imbalance(shards) == doctest::Approx(10.0));
}

TEST_CASE("cosine similarity") {
  std::vector<double> a{1, 1}, b{2, 2}, c{1, 0}, d{0, 1}, e{3, 4}, f{4, 3};
  CHECK(cosine_similarity(a, b) == doctest::Approx(1.0));
  CHECK(cosine_similarity(c, d) == 0.0);
  CHECK(cosine_similarity(e, f) == doctest::Approx(0.96));
  CHECK(cosine_similarity(e, f) == cosine_similarity(f, e));
  std::vector<double> e5{15, 20};
  CHECK(cosine_similarity(e5, f) == doctest::Approx(cosine_similarity(e, f)));
  std::vector<double> zero{0, 0};
  CHECK_THROWS_AS(cosine_similarity(zero, a), UndefinedInputError);
  std::vector<double> three{1, 2, 3};
  CHECK_THROWS_AS(cosine_similarity(three, a), StructuralError);
}

TEST_CASE("partition contracts") {
  SyntheticSpec spec;
  spec.per_class = 600;
  Dataset data = make_synthetic(spec, 1);

  SUBCASE("every client holds every class equally") {
    PartitionPlan plan;
    plan.num_clients = 10;
    plan.classes_min = plan.classes_max = 10;
    plan.samples_per_class = 20;
    auto shards = partition(data, plan);
    for (const auto& s : shards) CHECK(local_imbalance(s) == 1.0);
    CHECK(global_imbalance(shards) == 1.0);
  }

  SUBCASE("imbalanced plan hits the target ratio, stays disjoint and conserves counts") {
    for (double gamma : {10.0, 50.0, 100.0}) {
      for (std::uint64_t seed : {1u, 2u, 3u}) {
        PartitionPlan plan;
        plan.num_clients = 20;
        plan.classes_min = 3;
        plan.classes_max = 6;
        plan.samples_per_class = 50;
        plan.global_ratio = gamma;
        plan.minority_classes = {2, 4, 7};
        plan.seed = seed;
        auto shards = partition(data, plan);
        double g = global_imbalance(shards);
        CHECK(g >= 0.9 * gamma);
        CHECK(g <= 1.1 * gamma);

        std::set<int> seen;
        std::size_t total = 0;
        for (const auto& s : shards) {
          total += s.indices.size();
          seen.insert(s.indices.begin(), s.indices.end());
          std::vector<int> counts(10, 0);
          for (int i : s.indices) ++counts[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)])];
          CHECK(counts == s.per_class_counts);
          CHECK(s.total() > 0);
        }
        CHECK(seen.size() == total);
        auto v = composition(shards);
        auto have = data.class_counts();
        for (int c = 0; c < 10; ++c) CHECK(v[static_cast<std::size_t>(c)] <= have[static_cast<std::size_t>(c)]);
      }
    }
  }

  SUBCASE("balanced twin keeps the class sets") {
    PartitionPlan plan;
    plan.num_clients = 20;
    plan.classes_min = 3;
    plan.classes_max = 6;
    plan.samples_per_class = 20;
    plan.global_ratio = 100;
    plan.minority_classes = {2, 4, 7};
    auto a = partition(data, plan);
    plan.global_ratio = 1;
    auto b = partition(data, plan);
    for (std::size_t j = 0; j < a.size(); ++j)
      for (int c = 0; c < 10; ++c) {
        bool in_a = a[j].per_class_counts[static_cast<std::size_t>(c)] > 0;
        bool in_b = b[j].per_class_counts[static_cast<std::size_t>(c)] > 0;
        if (in_a) CHECK(in_b);
      }
    CHECK(global_imbalance(b) < 2.0);
  }

  SUBCASE("infeasible plan lists the shortfall") {
    PartitionPlan plan;
    plan.num_clients = 50;
    plan.classes_min = plan.classes_max = 10;
    plan.samples_per_class = 100;
    CHECK_THROWS_WITH_AS(partition(data, plan), doctest::Contains("class 0: need"), ConfigError);
  }

  SUBCASE("invalid plans") {
    PartitionPlan plan;
    plan.classes_min = 4;
    plan.classes_max = 3;
    CHECK_THROWS_AS(partition(data, plan), ConfigError);
    plan.classes_min = 1;
    plan.global_ratio = 0.5;
    CHECK_THROWS_AS(partition(data, plan), ConfigError);
  }
}

TEST_CASE("class-stratified split is disjoint") {
  SyntheticSpec spec;
  spec.per_class = 50;
  Dataset data = make_synthetic(spec, 2);
  auto [picked, rest] = split_per_class(data, 8, 3);
  CHECK(picked.size() == 80);
  CHECK(rest.size() == 420);
  std::set<int> all(picked.begin(), picked.end());
  for (int i : rest) CHECK(all.insert(i).second);
  CHECK_THROWS_AS(split_per_class(data, 51, 3), ConfigError);
}
