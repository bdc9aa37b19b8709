from src.commands import base_parser, cmd_simulate, config_from_args, run_command


def main():
    parser = base_parser("One simulated path: returns, drift, filters and variances")
    args = parser.parse_args()
    cfg = config_from_args(args)
    paths = run_command(cmd_simulate, cfg)
    print(f"[SIMULATE] seed={cfg.sim.seed} wrote {len(paths)} files to {cfg.output.dir}")


if __name__ == "__main__":
    main()
