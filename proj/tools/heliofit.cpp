#include <iostream>

#include "heliofit/service/cli.hpp"

int main(int argc, char** argv) { return heliofit::service::run_cli(argc, argv, std::cout, std::cerr); }
