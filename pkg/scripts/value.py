from src.commands import base_parser, cmd_value, config_from_args, run_command


def main():
    parser = base_parser("Value, required capital and efficiency for one configuration")
    parser.add_argument("--x0", type=float, default=1.0, help="Initial capital")
    parser.add_argument("--mc", action="store_true", help="Add Monte Carlo estimates of the values")
    args = parser.parse_args()
    cfg = config_from_args(args)
    paths = run_command(cmd_value, cfg, x0=args.x0, monte_carlo=args.mc)
    with open(paths[0], "r", encoding="utf-8") as f:
        print(f.read(), end="")


if __name__ == "__main__":
    main()
