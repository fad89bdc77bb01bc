#include <unistd.h>

#include <filesystem>

#include "test_util.hpp"

using namespace wfdiff;
using namespace wfdiff::testing;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("wfdiff_ck_" + std::to_string(::getpid()) + "_" + name);
}

bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

}  // namespace

TEST(Checkpoint, NetworkRoundTripIsBitExact) {
    Rng r(1);
    WFINet<float> net(WFINetConfig{}, r);
    randomize(net.parameters(), r, 0.3);
    Checkpoint<float> ck;
    ck.header = dump_config(RunConfig{});
    ck.add("wfi2.", net.parameters());
    const auto bytes = checkpoint_bytes(ck);
    std::istringstream in(bytes);
    const auto back = read_checkpoint<float>(in);
    EXPECT_EQ(back.header, ck.header);
    ASSERT_EQ(back.entries.size(), ck.entries.size());
    for (std::size_t i = 0; i < ck.entries.size(); ++i) {
        EXPECT_EQ(back.entries[i].first, ck.entries[i].first);
        EXPECT_TRUE(same_bits(back.entries[i].second, ck.entries[i].second)) << ck.entries[i].first;
    }
    EXPECT_EQ(checkpoint_bytes(back), bytes);
}

TEST(Checkpoint, LoadIntoFreshNetworkReproducesOutputs) {
    Rng r(2);
    WFINet<float> net(WFINetConfig{}, r);
    randomize(net.parameters(), r, 0.1);
    Checkpoint<float> ck;
    ck.add("wfi2.", net.parameters());
    const auto path = temp_path("net.wfck");
    save_checkpoint(ck, path.string());
    const auto loaded = load_checkpoint<float>(path.string());
    std::filesystem::remove(path);

    Rng other(99);
    WFINet<float> fresh(WFINetConfig{}, other);
    auto params = fresh.parameters();
    load_parameters(params, loaded.with_prefix("wfi2."));
    SubbandSet<float> in{Tensor<float>::randn({3, 4, 4}, r), Tensor<float>::randn({3, 4, 4}, r),
                         Tensor<float>::randn({3, 4, 4}, r), Tensor<float>::randn({3, 4, 4}, r)};
    EXPECT_TRUE(same_bits(net(in).ll, fresh(in).ll));
    EXPECT_TRUE(same_bits(net(in).hh, fresh(in).hh));
}

TEST(Checkpoint, LayoutHeader) {
    Checkpoint<float> ck;
    ck.header = "hi";
    ck.entries.emplace_back("a", Tensor<float>({1}, {1.0f}));
    const auto b = checkpoint_bytes(ck);
    ASSERT_GE(b.size(), 20u);
    EXPECT_EQ(b.substr(0, 4), "WFCK");
    EXPECT_EQ(b[4], 1);
    EXPECT_EQ(b[8], 2);
    EXPECT_EQ(b.substr(12, 2), "hi");
    EXPECT_EQ(b[14], 1);  // entry count
    EXPECT_EQ(b[18], 1);  // name length
    EXPECT_EQ(b.substr(22, 1), "a");
    EXPECT_EQ(b.substr(23, 4), "WFDT");
}

TEST(Checkpoint, MalformedInputs) {
    Checkpoint<float> ck;
    ck.header = "{}";
    ck.entries.emplace_back("w", Tensor<float>({2, 2}, {1, 2, 3, 4}));
    const auto good = checkpoint_bytes(ck);
    auto parse = [](const std::string& s) {
        std::istringstream in(s);
        return read_checkpoint<float>(in);
    };
    EXPECT_NO_THROW(parse(good));
    EXPECT_THROW(parse("WFDT" + good.substr(4)), FormatError);
    auto bad_version = good;
    bad_version[4] = 2;
    EXPECT_THROW(parse(bad_version), FormatError);
    for (std::size_t cut : {std::size_t{3}, std::size_t{10}, std::size_t{13}, good.size() - 1})
        EXPECT_THROW(parse(good.substr(0, cut)), FormatError) << cut;
    EXPECT_THROW(load_checkpoint<float>("/nonexistent/x.wfck"), FormatError);
}

TEST(Checkpoint, MissingOrMismatchedParameters) {
    Rng r(3);
    Conv2d<float> conv(2, 3, 3, r);
    NamedParams<float> params;
    conv.collect("c", params);
    std::map<std::string, Tensor<float>> src;
    EXPECT_THROW(load_parameters(params, src), FormatError);
    src.emplace("c.weight", Tensor<float>::zeros({3, 2, 1, 1}));
    src.emplace("c.bias", Tensor<float>::zeros({3}));
    EXPECT_THROW(load_parameters(params, src), DimensionError);
}

TEST(Checkpoint, PrefixSelection) {
    Checkpoint<float> ck;
    ck.entries.emplace_back("wfi2.a", Tensor<float>::ones({1}));
    ck.entries.emplace_back("frdam.ldfb.b", Tensor<float>::ones({2}));
    const auto m = ck.with_prefix("frdam.");
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m.begin()->first, "ldfb.b");
    EXPECT_EQ(ck.as_map().size(), 2u);
}
