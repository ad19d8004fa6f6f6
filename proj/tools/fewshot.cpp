#include "fewshot/cli.hpp"

int main(int argc, char** argv)
{
    return fewshot::cli::run(argc, argv);
}
