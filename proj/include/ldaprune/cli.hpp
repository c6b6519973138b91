#pragma once

namespace ldaprune::cli {

int run(int argc, char** argv);

}  // namespace ldaprune::cli
