// cxvae: simulate, preprocess, train, emulate, counterfactual, metrics, gradcheck, tailcheck.
//
// Exit codes: 0 success, 1 numerical or domain failure (or a failed check), 2 I/O or configuration failure.

#include <iostream>

#include "commands.hpp"
#include "cxvae/distributions.hpp"
#include "cxvae/emulation.hpp"
#include "cxvae/error.hpp"
#include "cxvae/io.hpp"

int main(int argc, char** argv) {
    using namespace cxvae;
    CLI::App app{"Conditional XVAE for spatio-temporal extremes"};
    app.set_version_flag("--version", std::string(io::kVersion));
    app.require_subcommand(1);
    cli::Action action;
    cli::add_data_commands(app, action);
    cli::add_model_commands(app, action);
    cli::add_check_commands(app, action);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    if (!action) return 2;

    try {
        return action();
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 1;
    } catch (const DomainError& e) {
        std::cerr << "domain error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
