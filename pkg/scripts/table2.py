from src.commands import base_parser, cmd_table2, config_from_args, run_command


def main():
    parser = base_parser("Values and efficiencies for R, E, C, F over the number of expert dates")
    parser.add_argument("--n-list", type=int, nargs="+", default=None, help="Override table2.n_list")
    args = parser.parse_args()
    cfg = config_from_args(args)
    if args.n_list:
        cfg.table2.n_list = list(args.n_list)
    paths = run_command(cmd_table2, cfg)
    with open(paths[1], "r", encoding="utf-8") as f:
        print(f.read(), end="")
    print(f"[TABLE2] wrote {len(paths)} files to {cfg.output.dir}")


if __name__ == "__main__":
    main()
