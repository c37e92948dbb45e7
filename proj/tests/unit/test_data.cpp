#include <doctest.h>

#include <fstream>

#include "rumkit/io.hpp"
#include "support.hpp"

using namespace rumkit;
using rumkit::testing::TempDir;

TEST_SUITE("data") {

TEST_CASE("IdSet sorts, dedups and does set algebra") {
    const IdSet a{5, 1, 3, 3};
    CHECK(a.ids() == std::vector<ExampleId>{1, 3, 5});
    const IdSet b{3, 4};
    CHECK((a | b).ids() == std::vector<ExampleId>{1, 3, 4, 5});
    CHECK((a & b).ids() == std::vector<ExampleId>{3});
    CHECK((a - b).ids() == std::vector<ExampleId>{1, 5});
    CHECK(IdSet::range(2, 4) == IdSet{2, 3, 4});
    CHECK(IdSet{1, 3}.is_subset_of(a));
    CHECK_FALSE(a.intersects(IdSet{2, 4}));
}

TEST_CASE("make_partition takes the set difference") {
    const auto p = make_partition(IdSet::range(1, 10), IdSet{1, 2}, Provenance::kCustom);
    CHECK(p.retain_ids == IdSet::range(3, 10));
    CHECK(p.universe() == IdSet::range(1, 10));
}

TEST_CASE("make_partition rejects degenerate forget sets") {
    CHECK_THROWS_AS(make_partition(IdSet::range(1, 10), IdSet::range(1, 10), Provenance::kCustom), InvalidArgument);
    CHECK_THROWS_AS(make_partition(IdSet::range(1, 10), IdSet{}, Provenance::kCustom), InvalidArgument);
    CHECK_THROWS_AS(make_partition(IdSet::range(1, 10), IdSet{11}, Provenance::kCustom), InvalidArgument);
}

TEST_CASE("three 1000-id buckets inside 45000 train ids leave 42000 retained") {
    const IdSet train = IdSet::range(1, 45000);
    const IdSet forget = IdSet::range(1, 1000) | IdSet::range(20001, 21000) | IdSet::range(44001, 45000);
    CHECK(make_partition(train, forget, Provenance::kMixed).retain_ids.size() == 42000);
    CHECK_THROWS_AS(make_partition(IdSet::range(1, 3000), IdSet::range(1, 3000), Provenance::kMixed), InvalidArgument);
}

TEST_CASE("random_subsets partitions the forget set") {
    const auto p = make_partition(IdSet::range(0, 99), IdSet::range(10, 14), Provenance::kRandom);
    SUBCASE("k = 1 is the identity") {
        const auto s = random_subsets(p, 1, 3);
        REQUIRE(s.size() == 1);
        CHECK(s[0] == p.forget_ids);
    }
    SUBCASE("k = 2 gives sizes 3 and 2, reproducibly") {
        const auto s = random_subsets(p, 2, 7);
        CHECK(s[0].size() == 3);
        CHECK(s[1].size() == 2);
        CHECK(random_subsets(p, 2, 7) == s);
        CHECK((s[0] | s[1]) == p.forget_ids);
        CHECK_FALSE(s[0].intersects(s[1]));
    }
    SUBCASE("k out of range") {
        CHECK_THROWS_AS(random_subsets(p, 0, 1), InvalidArgument);
        CHECK_THROWS_AS(random_subsets(p, 6, 1), InvalidArgument);
    }
}

TEST_CASE("random_subsets property over many cases") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const auto n = static_cast<ExampleId>(2 + rng.below(60));
        const auto forget = IdSet::range(0, n - 1);
        const auto p = make_partition(IdSet::range(0, n + 5), forget, Provenance::kRandom);
        const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        const auto s = random_subsets(p, k, rng.next());
        IdSet all;
        std::size_t total = 0, lo = SIZE_MAX, hi = 0;
        for (const auto& x : s) {
            all = all | x;
            total += x.size();
            lo = std::min(lo, x.size());
            hi = std::max(hi, x.size());
        }
        CHECK(all == forget);
        CHECK(total == forget.size());
        CHECK(hi - lo <= 1);
    }
}

TEST_CASE("partition files round-trip and are byte stable") {
    TempDir dir;
    const auto p = make_partition(IdSet::range(0, 9), IdSet{7, 2}, Provenance::kMemHigh);
    save_partition(p, dir / "p.json");
    CHECK(load_partition(dir / "p.json") == p);
    CHECK(load_partition(dir / "p.json", IdSet::range(0, 9)) == p);
    CHECK(read_file(dir / "p.json") ==
          "{\"provenance\":\"mem-high\",\"forget_ids\":[2,7],\"retain_ids\":[0,1,3,4,5,6,8,9]}\n");
}

TEST_CASE("malformed partition files are rejected") {
    TempDir dir;
    const auto write = [&](const std::string& text) {
        write_file_atomic(dir / "p.json", text);
        return dir / "p.json";
    };
    CHECK_THROWS_AS(load_partition(write("{\"provenance\":\"custom\",\"forget_ids\":[1,2],\"retain_ids\":[2,3]}")),
                    FormatError);
    CHECK_THROWS_AS(load_partition(write("{\"provenance\":\"custom\",\"forget_ids\":[1],\"retain_ids\":[2,99]}"),
                                   IdSet{1, 2, 3}),
                    FormatError);
    CHECK_THROWS_AS(load_partition(write("{\"provenance\":\"custom\",\"forget_ids\":[1]}")), FormatError);
    CHECK_THROWS_AS(load_partition(write("not json")), FormatError);
}

TEST_CASE("blobs are deterministic and split as documented") {
    const auto cfg = rumkit::testing::tiny_blobs(3, 0.2);
    const auto a = make_blobs(cfg);
    const auto b = make_blobs(cfg);
    CHECK(a.split("train") == IdSet::range(0, 199));
    CHECK(a.split("test") == IdSet::range(200, 299));
    const auto ids = a.all_ids().ids();
    CHECK(a.gather(ids) == b.gather(ids));
    CHECK(a.labels(ids) == b.labels(ids));
    // flipped labels are exactly the reported noisy ids
    BlobsConfig clean = cfg;
    clean.label_noise = 0.0;
    const auto c = make_blobs(clean);
    const IdSet noisy = blobs_noisy_ids(cfg);
    CHECK(noisy.size() == 40);
    for (const auto id : a.split("train")) CHECK((a.label(id) != c.label(id)) == noisy.contains(id));
}

TEST_CASE("validation is carved from train only") {
    const auto d = make_blobs(rumkit::testing::tiny_blobs());
    const auto v = hold_out_validation(d, 0.1, 4);
    CHECK(v.split("val").size() == 20);
    CHECK(v.split("train").size() == 180);
    CHECK((v.split("train") | v.split("val")) == d.split("train"));
    CHECK(v.split("test") == d.split("test"));
    CHECK(hold_out_validation(d, 0.1, 4).split("val") == v.split("val"));
}

TEST_CASE("csv datasets load with a subsample and an image shape") {
    TempDir dir;
    std::ofstream(dir / "d.csv") << "label,a,b,c,d\n0,1,2,3,4\n1,4,3,2,1\n0,0,0,0,0\n1,8,8,8,8\n0,1,1,1,1\n";
    CsvDatasetConfig cfg;
    cfg.path = dir / "d.csv";
    cfg.shape = FeatureShape{1, 2, 2};
    cfg.scale = 2.0;
    cfg.test_fraction = 0.4;
    const auto d = load_csv_dataset(cfg);
    CHECK(d.size() == 5);
    CHECK(d.shape() == FeatureShape{1, 2, 2});
    CHECK(d.split("test").size() == 2);
    CHECK(d.num_classes() == 2);
    // rows are shuffled; the scaled row sums survive as a multiset
    const auto all = d.all_ids().ids();
    const Eigen::VectorXd sums = d.gather(all).rowwise().sum();
    std::vector<double> got(sums.begin(), sums.end());
    std::sort(got.begin(), got.end());
    CHECK(got == std::vector<double>{0.0, 2.0, 5.0, 5.0, 16.0});

    std::ofstream(dir / "bad.csv") << "label,a\n0,x\n";
    cfg.path = dir / "bad.csv";
    CHECK_THROWS_AS(load_csv_dataset(cfg), FormatError);
}

}  // TEST_SUITE
