#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "evgs/commands.hpp"
#include "evgs/errors.hpp"

namespace {

int fail(std::string_view kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-supervised dynamic Gaussian splatting"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::uint64_t seed = 0;
  long iterations = 0;
  evgs::Overrides overrides;
  for (const std::string& name : evgs::command_names()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "INI run configuration")->required();
    sub->add_option("--seed", seed, "override run.seed");
    sub->add_option("--iterations", iterations, "override train.iterations");
    sub->add_flag("--no-event-loss", overrides.no_event_loss, "drop the event term");
    sub->add_flag("--no-motion-loss", overrides.no_motion_loss, "drop the motion term");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed") > 0) overrides.seed = seed;
  if (sub->count("--iterations") > 0) overrides.iterations = iterations;

  try {
    evgs::RunConfig config = evgs::load_config(config_path);
    evgs::apply_overrides(config, overrides);
    const auto metrics = (*evgs::find_command(sub->get_name()))(config);
    std::cout << metrics.string() << "\n";
  } catch (const evgs::Error& e) {
    return fail(evgs::to_string(e.kind()), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
