from src.commands import base_parser, cmd_variance, config_from_args, run_command


def main():
    parser = base_parser("Conditional variance curves per regime with asymptotic envelope bounds")
    args = parser.parse_args()
    cfg = config_from_args(args)
    paths = run_command(cmd_variance, cfg)
    print(f"[VARIANCE] wrote {len(paths)} files to {cfg.output.dir}")


if __name__ == "__main__":
    main()
