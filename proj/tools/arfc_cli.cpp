#include <iostream>

#include "arfc/cli.hpp"

int main(int argc, char** argv)
{
    return arfc::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
