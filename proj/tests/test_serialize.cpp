#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "fedsplit/serialize.hpp"

using namespace fedsplit;
using namespace fedsplit::nn;

namespace {

LayerStack seeded_stack(u64 seed) {
    LayerStack stack({Layer::dense(3, 4), Layer::batch_norm(4), Layer::relu(), Layer::dense(4, 2)}, {3});
    Rng rng(seed);
    stack.init_weights(rng);
    return stack;
}

} // namespace

TEST_CASE("weight blobs round-trip bit-exactly") {
    LayerStack stack = seeded_stack(404);
    // move running stats off their defaults
    Tape tape;
    Rng rng(405);
    Tensor x({5, 3});
    for (double& v : x.vec()) v = rng.normal();
    (void)stack.forward(x, Mode::Train, tape);

    const auto blob = serialize_weights(stack);
    const auto back = deserialize_weights(blob);
    CHECK(back == stack.state_copy());

    LayerStack other = seeded_stack(1);
    other.set_state(back);
    CHECK(other.predict(x) == stack.predict(x));
}

TEST_CASE("an empty tensor list is a header-only blob") {
    const auto blob = serialize_weights(std::vector<Tensor>{});
    CHECK(blob.size() == 12);  // magic + version + count
    CHECK(deserialize_weights(blob).empty());
}

TEST_CASE("truncation, bad magic, and bad version are rejected") {
    auto blob = serialize_weights(std::vector<Tensor>{Tensor::from({2}, {1.0, 2.0})});

    auto truncated = blob;
    truncated.pop_back();
    CHECK_THROWS_AS((void)deserialize_weights(truncated), ConfigError);

    auto trailing = blob;
    trailing.push_back(0);
    CHECK_THROWS_AS((void)deserialize_weights(trailing), ConfigError);

    auto bad_magic = blob;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS((void)deserialize_weights(bad_magic), ConfigError);

    auto bad_version = blob;
    bad_version[4] = 9;
    CHECK_THROWS_AS((void)deserialize_weights(bad_version), ConfigError);

    CHECK_THROWS_AS((void)deserialize_weights({}), ConfigError);
}

TEST_CASE("weights survive a file round-trip") {
    const auto path = (std::filesystem::temp_directory_path() / "fedsplit_weights_test.fsw").string();
    LayerStack stack = seeded_stack(7);
    write_weights_file(path, stack.state_copy());
    CHECK(read_weights_file(path) == stack.state_copy());
    std::remove(path.c_str());

    CHECK_THROWS_AS((void)read_weights_file("/nonexistent/dir/weights.fsw"), ConfigError);
}
