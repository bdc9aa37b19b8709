import sys

from src.commands import base_parser, cmd_validate, config_from_args, run_command


def main():
    parser = base_parser("Closed forms against independent oracles and Monte Carlo")
    parser.add_argument("--skip-mc", action="store_true", help="Leave out the Monte Carlo checks")
    args = parser.parse_args()
    cfg = config_from_args(args)
    paths, passed = run_command(cmd_validate, cfg, include_monte_carlo=not args.skip_mc)
    if not passed:
        print(f"[VALIDATION FAILED] report={paths[0]}")
        sys.exit(1)
    print(f"[VALIDATION OK] report={paths[0]}")


if __name__ == "__main__":
    main()
