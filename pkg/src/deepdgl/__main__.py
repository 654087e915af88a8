from deepdgl.cli import main

main()
